//! Synthetic plane-wave RF channel data from point-scatterer phantoms.
//!
//! The echo model is a linear superposition of Gaussian-modulated cosines with
//! no attenuation, directivity or multiple scattering. Arrival times use the
//! same plane-wave transmit + spherical receive geometry as the beamformer, so
//! a matched speed of sound focuses every scatterer exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Axis, ShapeBuilder};
use num_complex::Complex64;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AngleSet, ProbeConfig, SystemConfig};
use crate::error::{Error, Result};

/// Default fractional bandwidth of the pulse-echo response.
pub const DEFAULT_FRACTIONAL_BANDWIDTH: f64 = 0.6;

/// Pulses are truncated at this many envelope standard deviations.
pub const PULSE_TRUNCATION_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub z: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub true_sos: f64,
}

impl Phantom {
    pub fn new(scatterers: Vec<Scatterer>, true_sos: f64) -> Result<Self> {
        if scatterers.is_empty() {
            return Err(Error::InvalidArgument("phantom has no scatterers".into()));
        }
        if !(1000.0..=2000.0).contains(&true_sos) {
            return Err(Error::InvalidArgument(format!(
                "true_sos {true_sos} outside [1000, 2000] m/s"
            )));
        }
        for s in &scatterers {
            if !(s.z >= 0.0) || !(s.amplitude.abs() <= 1.0) || !s.x.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid scatterer {s:?}")));
            }
        }
        Ok(Phantom {
            scatterers,
            true_sos,
        })
    }

    pub fn max_depth(&self) -> f64 {
        self.scatterers.iter().map(|s| s.z).fold(0.0, f64::max)
    }
}

/// Raw channel data, logically `Nt x Ne x K` (time x element x plane wave).
///
/// Stored column-major so that each receive trace is contiguous in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RfCube {
    samples: Array3<f64>,
    pub fs: f64,
    /// Time of the first sample, relative to the transmit event.
    pub t0: f64,
    pub element_x: Vec<f64>,
    pub angles: Vec<f64>,
}

impl RfCube {
    pub fn new(
        samples: Array3<f64>,
        fs: f64,
        t0: f64,
        element_x: Vec<f64>,
        angles: Vec<f64>,
    ) -> Result<Self> {
        let (nt, ne, k) = samples.dim();
        if nt == 0 || ne != element_x.len() || k != angles.len() {
            return Err(Error::DimensionMismatch(format!(
                "cube {nt}x{ne}x{k} vs {} elements, {} angles",
                element_x.len(),
                angles.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite RF sample".into()));
        }
        let mut fortran = Array3::zeros((nt, ne, k).f());
        fortran.assign(&samples);
        Ok(RfCube {
            samples: fortran,
            fs,
            t0,
            element_x,
            angles,
        })
    }

    fn zeros(nt: usize, fs: f64, t0: f64, element_x: Vec<f64>, angles: Vec<f64>) -> Self {
        let samples = Array3::zeros((nt, element_x.len(), angles.len()).f());
        RfCube {
            samples,
            fs,
            t0,
            element_x,
            angles,
        }
    }

    pub fn samples(&self) -> &Array3<f64> {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.dim().0
    }

    pub fn num_elements(&self) -> usize {
        self.element_x.len()
    }

    pub fn num_planewaves(&self) -> usize {
        self.angles.len()
    }

    /// Receive trace of element `i` for plane wave `k`.
    pub fn trace(&self, i: usize, k: usize) -> &[f64] {
        let nt = self.num_samples();
        let start = (k * self.num_elements() + i) * nt;
        &self.samples.as_slice_memory_order().expect("contiguous cube")[start..start + nt]
    }
}

/// Envelope standard deviation of the pulse, chosen so the -6 dB envelope
/// width matches `frac_bw * fc`.
pub fn pulse_sigma(fc: f64, frac_bw: f64) -> f64 {
    (2.0 * 2f64.ln()).sqrt() / (PI * fc * frac_bw)
}

/// Gaussian-modulated cosine, zero beyond six envelope sigmas.
pub fn gauss_pulse(t: f64, fc: f64, frac_bw: f64) -> f64 {
    let sigma = pulse_sigma(fc, frac_bw);
    if t.abs() > PULSE_TRUNCATION_SIGMAS * sigma {
        return 0.0;
    }
    (2.0 * PI * fc * t).cos() * (-t * t / (2.0 * sigma * sigma)).exp()
}

/// Two-way propagation time from the plane-wave transmit event to `(x, z)`
/// and back to an element at `element_x`.
#[inline]
pub(crate) fn arrival_time(x: f64, z: f64, element_x: f64, cos_t: f64, sin_t: f64, c: f64) -> f64 {
    let dx = x - element_x;
    (z * cos_t + x * sin_t + (z * z + dx * dx).sqrt()) / c
}

/// Recording length that covers every echo from depths up to `max_depth`
/// inside the aperture, with headroom for a slower assumed speed of sound.
pub fn covering_duration(probe: &ProbeConfig, angles: &AngleSet, max_depth: f64, sos: f64) -> f64 {
    let xs = probe.element_positions();
    let edges = [xs[0], xs[xs.len() - 1]];
    let mut longest: f64 = 0.0;
    for &theta in &angles.angles {
        for &x in &edges {
            for &xe in &edges {
                longest = longest.max(arrival_time(x, max_depth, xe, theta.cos(), theta.sin(), sos));
            }
        }
    }
    let tail = PULSE_TRUNCATION_SIGMAS
        * pulse_sigma(probe.center_frequency, DEFAULT_FRACTIONAL_BANDWIDTH);
    longest * 1.01 + 2.0 * tail
}

/// Adds `base * q^m * gauss[m] * Re(clock[m] * phase)` to `out[m]`.
///
/// The powers of `q` run as four interleaved products so the loop carries
/// no long dependency chain.
#[inline]
fn add_pulse(out: &mut [f64], clock: (&[f64], &[f64]), gauss: &[f64], (base, q): (f64, f64), phase: Complex64) {
    let n = out.len();
    let (re, im, gauss) = (&clock.0[..n], &clock.1[..n], &gauss[..n]);
    let mut pw = [base, base * q, base * q * q, base * q * q * q];
    let q4 = (q * q) * (q * q);
    let body = n - n % 4;
    for (((o, r), i), g) in out[..body]
        .chunks_exact_mut(4)
        .zip(re.chunks_exact(4))
        .zip(im.chunks_exact(4))
        .zip(gauss.chunks_exact(4))
    {
        for j in 0..4 {
            o[j] += pw[j] * g[j] * (r[j] * phase.re - i[j] * phase.im);
        }
        for p in &mut pw {
            *p *= q4;
        }
    }
    for j in body..n {
        out[j] += pw[j - body] * gauss[j] * (re[j] * phase.re - im[j] * phase.im);
    }
}

/// Simulates channel data with the default pulse bandwidth.
pub fn simulate(
    phantom: &Phantom,
    probe: &ProbeConfig,
    angles: &AngleSet,
    duration: f64,
) -> Result<RfCube> {
    simulate_with_bandwidth(phantom, probe, angles, duration, DEFAULT_FRACTIONAL_BANDWIDTH)
}

pub fn simulate_with_bandwidth(
    phantom: &Phantom,
    probe: &ProbeConfig,
    angles: &AngleSet,
    duration: f64,
    frac_bw: f64,
) -> Result<RfCube> {
    probe.validate()?;
    if !(frac_bw > 0.0 && frac_bw < 2.0) {
        return Err(Error::InvalidArgument("fractional bandwidth must lie in (0, 2)".into()));
    }
    let required = 2.0 * phantom.max_depth() / phantom.true_sos;
    if !(duration >= required) {
        return Err(Error::DurationTooShort { duration, required });
    }
    let limit = 0.75 * probe.lateral_extent();
    if let Some(s) = phantom.scatterers.iter().find(|s| s.x.abs() > limit) {
        return Err(Error::ScattererOutOfRange { x: s.x, limit });
    }

    let fs = probe.sampling_frequency;
    let t0 = 0.0;
    let nt = (duration * fs).floor() as usize + 1;
    let mut cube = RfCube::zeros(nt, fs, t0, probe.element_positions(), angles.angles.clone());

    let fc = probe.center_frequency;
    let c = phantom.true_sos;
    let sigma = pulse_sigma(fc, frac_bw);
    let half_width = PULSE_TRUNCATION_SIGMAS * sigma;
    let dt = 1.0 / fs;
    let omega = 2.0 * PI * fc;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let scatterers: Vec<&Scatterer> = phantom.scatterers.iter().filter(|s| s.amplitude != 0.0).collect();

    // exp(i w t) splits into a per-sample clock and per-path phase factors.
    let (clock_re, clock_im): (Vec<f64>, Vec<f64>) = (0..nt)
        .map(|n| (omega * (n as f64 * dt + t0)).sin_cos())
        .map(|(sin, cos)| (cos, sin))
        .unzip();
    // plane-wave-major so the scatterer loop below reads it sequentially
    let transmit: Vec<(f64, Complex64)> = angles
        .angles
        .iter()
        .flat_map(|th| {
            let (cos_t, sin_t) = (th.cos(), th.sin());
            scatterers.iter().map(move |s| {
                let t = (s.z * cos_t + s.x * sin_t) / c;
                (t, Complex64::from_polar(1.0, -omega * t))
            })
        })
        .collect();
    // exp(-(m dt)^2 / 2 sigma^2) for offsets within one pulse window
    let window_len = (2.0 * half_width * fs).ceil() as usize + 3;
    let gauss: Vec<f64> = (0..window_len)
        .map(|m| (-(m as f64 * dt).powi(2) * inv_two_var).exp())
        .collect();
    let offset = |n: usize, tau: f64| n as f64 * dt + t0 - tau;
    let element_x = cube.element_x.clone();

    cube.samples.axis_iter_mut(Axis(1)).into_par_iter().enumerate().for_each(|(i, mut traces)| {
        let xe = element_x[i];
        let receive: Vec<(f64, Complex64)> = scatterers
            .iter()
            .map(|s| {
                let dx = s.x - xe;
                let t = (s.z * s.z + dx * dx).sqrt() / c;
                (t, Complex64::from_polar(1.0, -omega * t))
            })
            .collect();
        for (k, column) in traces.columns_mut().into_iter().enumerate() {
            let trace = column.into_slice().expect("contiguous trace");
            let transmit = &transmit[k * scatterers.len()..(k + 1) * scatterers.len()];
            for ((s, &(tx, tx_phase)), &(rx, rx_phase)) in scatterers.iter().zip(transmit).zip(&receive) {
                let tau = tx + rx;
                // one-sample margins either side, trimmed exactly below
                let first = (tau - half_width - t0) * fs;
                let last = (tau + half_width - t0) * fs;
                if last < -1.0 || first > nt as f64 {
                    continue;
                }
                let mut lo = if first < 1.0 { 0 } else { first as usize - 1 };
                let mut hi = ((last.max(0.0) as usize) + 1).min(nt - 1);
                while lo <= hi && offset(lo, tau).abs() > half_width {
                    lo += 1;
                }
                while hi > lo && offset(hi, tau).abs() > half_width {
                    hi -= 1;
                }
                if lo > hi || offset(lo, tau).abs() > half_width {
                    continue;
                }
                let phase = tx_phase * rx_phase;
                let t = offset(lo, tau);
                let base = s.amplitude * (-t * t * inv_two_var).exp();
                let q = (-2.0 * t * dt * inv_two_var).exp();
                add_pulse(
                    &mut trace[lo..=hi],
                    (&clock_re[lo..=hi], &clock_im[lo..=hi]),
                    &gauss,
                    (base, q),
                    phase,
                );
            }
        }
    });
    Ok(cube)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Hypoechoic,
    Hyperechoic,
    PointTargets,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Hypoechoic => "hypoechoic",
            PhantomKind::Hyperechoic => "hyperechoic",
            PhantomKind::PointTargets => "point_targets",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hypoechoic" => Ok(PhantomKind::Hypoechoic),
            "hyperechoic" => Ok(PhantomKind::Hyperechoic),
            "point_targets" | "points" => Ok(PhantomKind::PointTargets),
            other => Err(Error::InvalidArgument(format!("unknown phantom kind {other:?}"))),
        }
    }
}

/// Layout of the synthetic phantoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomGeometry {
    /// Lateral bounds of the speckle field.
    pub field_x: (f64, f64),
    /// Depth bounds of the speckle field.
    pub field_z: (f64, f64),
    pub lesion_center: (f64, f64),
    pub lesion_radius: f64,
    pub hypo_gain_db: f64,
    pub hyper_gain_db: f64,
    /// Peak background reflectivity; leaves headroom for the hyperechoic gain.
    pub background_amplitude: f64,
    /// Speckle scatterers per wavelength squared.
    pub density: f64,
    /// Frequency used to turn `density` into a scatterer count.
    pub center_frequency: f64,
    pub true_sos: f64,
    pub point_x: f64,
    pub point_depths: Vec<f64>,
}

impl Default for PhantomGeometry {
    fn default() -> Self {
        PhantomGeometry {
            field_x: (-7e-3, 7e-3),
            field_z: (15e-3, 25e-3),
            lesion_center: (0.0, 20e-3),
            lesion_radius: 3e-3,
            hypo_gain_db: -30.0,
            hyper_gain_db: 12.0,
            background_amplitude: 10f64.powf(-12.0 / 20.0),
            density: 4.0,
            center_frequency: 8.48e6,
            true_sos: 1540.0,
            point_x: 0.0,
            point_depths: vec![10e-3, 20e-3, 30e-3, 40e-3, 50e-3],
        }
    }
}

impl PhantomGeometry {
    pub fn wavelength(&self) -> f64 {
        self.true_sos / self.center_frequency
    }

    pub fn num_speckle_scatterers(&self) -> usize {
        let area = (self.field_x.1 - self.field_x.0) * (self.field_z.1 - self.field_z.0);
        let lambda = self.wavelength();
        (self.density * area / (lambda * lambda)).ceil() as usize
    }

    pub fn inside_lesion(&self, x: f64, z: f64) -> bool {
        let (cx, cz) = self.lesion_center;
        (x - cx).powi(2) + (z - cz).powi(2) <= self.lesion_radius.powi(2)
    }

    /// The default layout shrunk, where needed, to fit inside the probe
    /// aperture and the imaged depth range of `sys`. Systems that already
    /// contain the default layout get it unchanged.
    pub fn fitted(sys: &SystemConfig) -> Self {
        let mut g = PhantomGeometry::default();
        let (z0, z1) = (sys.imaging.depth_start, sys.imaging.depth_end);
        let half = 0.45 * sys.probe.lateral_extent();
        if g.field_x.0 < -half || g.field_x.1 > half {
            g.field_x = (-half, half);
        }
        if g.field_z.0 < z0 || g.field_z.1 > z1 {
            let margin = 0.1 * (z1 - z0);
            g.field_z = (z0 + margin, z1 - margin);
        }
        let (fx, fz) = (g.field_x, g.field_z);
        if !g.inside_field(g.lesion_center) {
            g.lesion_center = (0.5 * (fx.0 + fx.1), 0.5 * (fz.0 + fz.1));
        }
        // room for the background box beside the lesion
        let (cx, cz) = g.lesion_center;
        g.lesion_radius = g
            .lesion_radius
            .min(0.45 * (fx.1 - cx))
            .min(0.9 * (cz - fz.0).min(fz.1 - cz));
        g.point_depths.retain(|&z| z >= z0 && z <= z1);
        if g.point_depths.is_empty() {
            g.point_depths.push(0.5 * (z0 + z1));
        }
        g.center_frequency = sys.probe.center_frequency;
        g
    }

    fn inside_field(&self, (x, z): (f64, f64)) -> bool {
        x >= self.field_x.0 && x <= self.field_x.1 && z >= self.field_z.0 && z <= self.field_z.1
    }

    fn lesion_gain(&self, kind: PhantomKind) -> f64 {
        match kind {
            PhantomKind::Hypoechoic => 10f64.powf(self.hypo_gain_db / 20.0),
            PhantomKind::Hyperechoic => 10f64.powf(self.hyper_gain_db / 20.0),
            PhantomKind::PointTargets => 1.0,
        }
    }
}

/// Default-geometry phantom; deterministic in `seed`.
pub fn make_cyst_phantom(kind: PhantomKind, seed: u64) -> Phantom {
    make_phantom(kind, seed, &PhantomGeometry::default())
        .expect("default phantom geometry is valid")
}

pub fn make_phantom(kind: PhantomKind, seed: u64, geom: &PhantomGeometry) -> Result<Phantom> {
    if kind == PhantomKind::PointTargets {
        let points = geom
            .point_depths
            .iter()
            .map(|&z| Scatterer {
                x: geom.point_x,
                z,
                amplitude: 1.0,
            })
            .collect();
        return Phantom::new(points, geom.true_sos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = geom.lesion_gain(kind);
    let scatterers = (0..geom.num_speckle_scatterers())
        .map(|_| {
            let x = rng.gen_range(geom.field_x.0..geom.field_x.1);
            let z = rng.gen_range(geom.field_z.0..geom.field_z.1);
            let mut amplitude = geom.background_amplitude * rng.gen_range(-1.0..1.0);
            if geom.inside_lesion(x, z) {
                amplitude *= gain;
            }
            Scatterer { x, z, amplitude }
        })
        .collect();
    Phantom::new(scatterers, geom.true_sos)
}
