//! Time-of-flight correction and delay-and-sum beamforming, one image per
//! plane wave.
//!
//! Every pixel sits on a scanline through an element center. The receive
//! aperture grows with depth (`half-width = z / (2 F#)`), traces are sampled at
//! fractional delays by linear interpolation, and the weighted sum is divided
//! by the number of elements with nonzero weight.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::aberration::AberrationProfile;
use crate::config::ImagingConfig;
use crate::error::{Error, Result};
use crate::rfsim::{arrival_time, RfCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }
}

/// Receive apodization: window shape and f-number of the dynamic aperture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApodizationSpec {
    pub window: Window,
    pub f_number: f64,
}

impl Default for ApodizationSpec {
    fn default() -> Self {
        ApodizationSpec {
            window: Window::Hann,
            f_number: 1.0,
        }
    }
}

impl ApodizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_number > 0.5 && self.f_number <= 4.0) {
            return Err(Error::InvalidConfig(format!(
                "f_number {} outside (0.5, 4]",
                self.f_number
            )));
        }
        Ok(())
    }

    /// Weight of an element at lateral offset `offset` from a pixel at `depth`.
    pub fn weight(&self, offset: f64, depth: f64) -> f64 {
        let half = depth / (2.0 * self.f_number);
        let d = offset.abs();
        if half <= 0.0 {
            return if d == 0.0 { 1.0 } else { 0.0 };
        }
        match self.window {
            Window::Rectangular => {
                if d <= half {
                    1.0
                } else {
                    0.0
                }
            }
            Window::Hann => {
                if d < half {
                    0.5 * (1.0 + (PI * d / half).cos())
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-plane-wave beamformed images, `A x L x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DasTensor {
    pub data: Array3<f64>,
    pub angles: Vec<f64>,
}

impl DasTensor {
    pub fn new(data: Array3<f64>, angles: Vec<f64>) -> Result<Self> {
        if data.dim().2 != angles.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor has {} slabs but {} angles",
                data.dim().2,
                angles.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite DAS value".into()));
        }
        Ok(DasTensor { data, angles })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn slab(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., .., k])
    }

    /// Sub-tensor holding only the listed plane waves, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<DasTensor> {
        let k = self.dim().2;
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidArgument(format!("planewave index {bad} out of range (K = {k})")));
        }
        Ok(DasTensor {
            data: self.data.select(Axis(2), indices),
            angles: indices.iter().map(|&i| self.angles[i]).collect(),
        })
    }
}

/// Two-way time of flight for a pixel `(x, z)`, receive element at
/// `element_x`, plane wave at `angle`, speed of sound `c`.
pub fn tof(pixel: (f64, f64), element_x: f64, angle: f64, c: f64) -> f64 {
    let (x, z) = pixel;
    arrival_time(x, z, element_x, angle.cos(), angle.sin(), c)
}

/// Linear interpolation at fractional sample `pos`; zero outside the record.
#[inline]
fn sample_at(trace: &[f64], pos: f64) -> f64 {
    let last = (trace.len() - 1) as f64;
    if !(pos >= 0.0 && pos <= last) {
        return 0.0;
    }
    // truncation is floor here since pos >= 0
    let i0 = pos as usize;
    let frac = pos - i0 as f64;
    if frac == 0.0 {
        trace[i0]
    } else {
        trace[i0] + frac * (trace[i0 + 1] - trace[i0])
    }
}

fn check_dims(cube: &RfCube, cfg: &ImagingConfig) -> Result<()> {
    if cube.num_elements() != cfg.num_scanlines {
        return Err(Error::DimensionMismatch(format!(
            "cube has {} elements but grid has {} scanlines",
            cube.num_elements(),
            cfg.num_scanlines
        )));
    }
    element_pitch(&cube.element_x).map(drop)
}

/// Spacing of a uniform linear array; other layouts are rejected.
fn element_pitch(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 2 {
        return Ok(0.0);
    }
    let pitch = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let uniform = pitch > 0.0
        && xs
            .iter()
            .enumerate()
            .all(|(i, &x)| (x - (xs[0] + i as f64 * pitch)).abs() <= 1e-9 * pitch);
    if !uniform {
        return Err(Error::InvalidArgument("element positions must be uniformly spaced and ascending".into()));
    }
    Ok(pitch)
}

/// Receive weights and path lengths indexed by element offset `j = |l - i|`
/// and depth row, shared by every scanline and plane wave.
struct ApertureTables {
    rows: usize,
    /// Largest offset with a nonzero weight at any depth.
    max_offset: usize,
    weight: Vec<f64>,
    receive: Vec<f64>,
    /// First row where offset `j` carries weight.
    first_row: Vec<usize>,
    /// `nonzero[j * rows + a]`: offsets `0..=j` with nonzero weight at row `a`.
    nonzero: Vec<u32>,
}

impl ApertureTables {
    fn new(pitch: f64, elements: usize, depths: &[f64], apod: &ApodizationSpec) -> Self {
        let rows = depths.len();
        let mut weight = Vec::new();
        let mut receive = Vec::new();
        let mut first_row = Vec::new();
        let mut nonzero: Vec<u32> = Vec::new();
        for j in 0..elements {
            let d = j as f64 * pitch;
            let w: Vec<f64> = depths.iter().map(|&z| apod.weight(d, z)).collect();
            let first = w.iter().position(|&v| v != 0.0).unwrap_or(rows);
            if first == rows && j > 0 {
                break;
            }
            first_row.push(first);
            for (a, &v) in w.iter().enumerate() {
                let below = if j == 0 { 0 } else { nonzero[(j - 1) * rows + a] };
                nonzero.push(below + (v != 0.0) as u32);
            }
            weight.extend(w);
            receive.extend(depths.iter().map(|&z| (z * z + d * d).sqrt()));
        }
        ApertureTables {
            rows,
            max_offset: first_row.len() - 1,
            weight,
            receive,
            first_row,
            nonzero,
        }
    }

    /// Elements with nonzero weight for scanline `l` at row `a`.
    fn active(&self, l: usize, elements: usize, a: usize) -> u32 {
        let left = l.min(self.max_offset);
        let right = (elements - 1 - l).min(self.max_offset);
        self.nonzero[left * self.rows + a] + self.nonzero[right * self.rows + a] - self.nonzero[a]
    }
}

/// Beamforms the plane waves `ks` into an `A x L x ks.len()` array.
/// `sos(l, j)` is the speed of sound used for scanline `l`, plane wave `ks[j]`.
fn beamform(
    cube: &RfCube,
    ks: &[usize],
    sos: impl Fn(usize, usize) -> f64 + Sync,
    apod: &ApodizationSpec,
    cfg: &ImagingConfig,
) -> Result<Array3<f64>> {
    let depths = cfg.depths();
    let rows = depths.len();
    let xs = &cube.element_x;
    let ne = xs.len();
    let lines = cfg.num_scanlines;
    let pitch = element_pitch(xs)?;
    let tables = ApertureTables::new(pitch, ne, &depths, apod);
    let fs = cube.fs;
    let t0_samples = cube.t0 * fs;

    // one column of A samples per (plane wave, scanline)
    let mut columns = Array3::<f64>::zeros((ks.len(), lines, rows));
    columns
        .as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(rows)
        .enumerate()
        .for_each(|(task, col)| {
            let (j, l) = (task / lines, task % lines);
            let k = ks[j];
            let x = xs[l];
            let (cos_t, sin_t) = (cube.angles[k].cos(), cube.angles[k].sin());
            let transmit: Vec<f64> = depths.iter().map(|&z| z * cos_t + x * sin_t).collect();
            let scale = fs / sos(l, j);
            let lo = l.saturating_sub(tables.max_offset);
            let hi = (l + tables.max_offset).min(ne - 1);
            for i in lo..=hi {
                let off = l.abs_diff(i);
                let trace = cube.trace(i, k);
                let span = off * rows..(off + 1) * rows;
                let (w, rx) = (&tables.weight[span.clone()], &tables.receive[span]);
                for a in tables.first_row[off]..rows {
                    if w[a] != 0.0 {
                        col[a] += w[a] * sample_at(trace, (transmit[a] + rx[a]) * scale - t0_samples);
                    }
                }
            }
            for (a, v) in col.iter_mut().enumerate() {
                let n = tables.active(l, ne, a);
                if n > 0 {
                    *v /= n as f64;
                }
            }
        });
    Ok(columns.permuted_axes([2, 1, 0]).as_standard_layout().into_owned())
}

/// Delay-and-sum image of plane wave `k`, with a speed of sound per scanline.
pub fn das_single(
    cube: &RfCube,
    k: usize,
    c_per_line: &[f64],
    apod: &ApodizationSpec,
    cfg: &ImagingConfig,
) -> Result<Array2<f64>> {
    check_dims(cube, cfg)?;
    if k >= cube.num_planewaves() {
        return Err(Error::InvalidArgument(format!("planewave index {k} out of range")));
    }
    if c_per_line.len() != cfg.num_scanlines {
        return Err(Error::DimensionMismatch(format!(
            "{} speeds for {} scanlines",
            c_per_line.len(),
            cfg.num_scanlines
        )));
    }
    let img = beamform(cube, &[k], |l, _| c_per_line[l], apod, cfg)?;
    Ok(img.index_axis_move(Axis(2), 0))
}

/// Beamforms every plane wave, taking scanline speeds from column `k` of the profile.
pub fn das_all(
    cube: &RfCube,
    profile: &AberrationProfile,
    apod: &ApodizationSpec,
    cfg: &ImagingConfig,
) -> Result<DasTensor> {
    check_dims(cube, cfg)?;
    if profile.sos.dim() != (cfg.num_scanlines, cube.num_planewaves()) {
        return Err(Error::DimensionMismatch(format!(
            "profile {:?} vs (L, K) = ({}, {})",
            profile.sos.dim(),
            cfg.num_scanlines,
            cube.num_planewaves()
        )));
    }
    let ks: Vec<usize> = (0..cube.num_planewaves()).collect();
    let data = beamform(cube, &ks, |l, j| profile.sos[[l, j]], apod, cfg)?;
    DasTensor::new(data, cube.angles.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_probe, make_angle_set, ProbeConfig};
    use crate::rfsim::{simulate, Phantom, Scatterer};

    #[test]
    fn tof_examples() {
        let t = tof((0.0, 7.7e-3), 0.0, 0.0, 1540.0);
        assert!((t - 10e-6).abs() < 1e-18);
        let z = 12.3e-3;
        assert_eq!(tof((0.4e-3, z), 0.4e-3, 0.0, 1540.0), 2.0 * z / 1540.0);
    }

    /// Extended-precision geometric oracle using a double-double accumulation.
    #[test]
    fn tof_matches_extended_precision() {
        fn two_sum(a: f64, b: f64) -> (f64, f64) {
            let s = a + b;
            let bb = s - a;
            (s, (a - (s - bb)) + (b - bb))
        }
        fn two_prod(a: f64, b: f64) -> (f64, f64) {
            let p = a * b;
            (p, a.mul_add(b, -p))
        }
        let (x, z, xe, c) = (1e-3, 10e-3, -1e-3, 1540.0);
        let theta = 5f64.to_radians();
        let (a, ea) = two_prod(z, theta.cos());
        let (b, eb) = two_prod(x, theta.sin());
        let dx = x - xe;
        let (zz, ezz) = two_prod(z, z);
        let (xx, exx) = two_prod(dx, dx);
        let (r2, er2) = two_sum(zz, xx);
        let r2_lo = er2 + ezz + exx;
        let r = r2.sqrt();
        let r_lo = (r2 - r * r + r2_lo) / (2.0 * r);
        let (s1, e1) = two_sum(a, b);
        let (s2, e2) = two_sum(s1, r);
        let total = s2 + (e1 + e2 + ea + eb + r_lo);
        let oracle = total / c;
        let got = tof((x, z), xe, theta, c);
        assert!((got - oracle).abs() < 1e-15, "{got} vs {oracle}");
    }

    #[test]
    fn hann_and_rect_weights() {
        let hann = ApodizationSpec::default();
        assert_eq!(hann.weight(0.0, 10e-3), 1.0);
        assert_eq!(hann.weight(5e-3, 10e-3), 0.0);
        assert!((hann.weight(2.5e-3, 10e-3) - 0.5).abs() < 1e-15);
        let rect = ApodizationSpec { window: Window::Rectangular, f_number: 2.0 };
        assert_eq!(rect.weight(2.5e-3, 10e-3), 1.0);
        assert_eq!(rect.weight(2.6e-3, 10e-3), 0.0);
        assert_eq!(hann.weight(0.0, 0.0), 1.0);
        assert!(ApodizationSpec { window: Window::Hann, f_number: 0.5 }.validate().is_err());
    }

    fn tiny_setup() -> (ProbeConfig, ImagingConfig) {
        let probe = ProbeConfig {
            num_elements: 32,
            num_planewaves: 3,
            ..default_probe()
        };
        let cfg = ImagingConfig {
            depth_start: 3e-3,
            depth_end: 7e-3,
            num_depth_samples: 101,
            num_scanlines: 32,
            ..ImagingConfig::default()
        };
        (probe, cfg)
    }

    #[test]
    fn zero_cube_gives_zero_image() {
        let (probe, cfg) = tiny_setup();
        let cube = RfCube::new(
            Array3::zeros((300, 32, 3)),
            probe.sampling_frequency,
            0.0,
            probe.element_positions(),
            vec![-0.1, 0.0, 0.1],
        )
        .unwrap();
        let img = das_single(&cube, 1, &[1540.0; 32], &ApodizationSpec::default(), &cfg).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_aperture_is_the_delayed_trace() {
        let (probe, mut cfg) = tiny_setup();
        // shallow enough that z / (2 F#) stays under one pitch
        cfg.depth_start = 0.02e-3;
        cfg.depth_end = 0.18e-3;
        cfg.num_depth_samples = 9;
        let apod = ApodizationSpec { window: Window::Rectangular, f_number: 0.51 };
        let nt = 64;
        let samples = Array3::from_shape_fn((nt, 32, 3), |(n, i, k)| {
            ((n * 7 + i * 3 + k) % 11) as f64 - 5.0
        });
        let cube = RfCube::new(samples, probe.sampling_frequency, 0.0, probe.element_positions(), vec![-0.05, 0.0, 0.05]).unwrap();
        let speeds: Vec<f64> = (0..32).map(|l| 1530.0 + l as f64).collect();
        let img = das_single(&cube, 2, &speeds, &apod, &cfg).unwrap();
        for (a, z) in cfg.depths().into_iter().enumerate() {
            for l in 0..32 {
                let x = cube.element_x[l];
                let t = tof((x, z), x, 0.05, speeds[l]);
                let pos = t * cube.fs;
                let tr = cube.trace(l, 2);
                // negative lateral positions put some pixels before the first sample
                let want = if pos < 0.0 {
                    0.0
                } else {
                    let i0 = pos.floor() as usize;
                    let frac = pos - i0 as f64;
                    (1.0 - frac) * tr[i0] + frac * tr[i0 + 1]
                };
                assert!((img[[a, l]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lone_scatterer_focuses_on_its_pixel() {
        let (probe, cfg) = tiny_setup();
        let angles = make_angle_set(3, 5.0, 3).unwrap();
        let depths = cfg.depths();
        let (a0, l0) = (47, 13);
        let xs = probe.element_positions();
        let ph = Phantom::new(vec![Scatterer { x: xs[l0], z: depths[a0], amplitude: 1.0 }], 1540.0).unwrap();
        let cube = simulate(&ph, &probe, &angles, 12e-6).unwrap();
        let img = das_single(&cube, 1, &[1540.0; 32], &ApodizationSpec::default(), &cfg).unwrap();
        let (mut best, mut arg) = (0.0, (0, 0));
        for ((a, l), v) in img.indexed_iter() {
            if v.abs() > best {
                best = v.abs();
                arg = (a, l);
            }
        }
        assert_eq!(arg, (a0, l0));
    }

    #[test]
    fn das_all_stacks_das_single() {
        let (probe, cfg) = tiny_setup();
        let angles = make_angle_set(3, 5.0, 3).unwrap();
        let ph = Phantom::new(
            vec![
                Scatterer { x: 0.5e-3, z: 4e-3, amplitude: 0.8 },
                Scatterer { x: -1.0e-3, z: 6e-3, amplitude: -0.6 },
            ],
            1540.0,
        )
        .unwrap();
        let cube = simulate(&ph, &probe, &angles, 12e-6).unwrap();
        let profile = crate::aberration::sample_profile(1540.0, 3.85, 32, 3, 8).unwrap();
        let apod = ApodizationSpec::default();
        let all = das_all(&cube, &profile, &apod, &cfg).unwrap();
        for k in 0..3 {
            let col = profile.sos.column(k).to_vec();
            let single = das_single(&cube, k, &col, &apod, &cfg).unwrap();
            assert_eq!(all.slab(k), single);
        }
        let flat = AberrationProfile::constant(1540.0, 32, 3);
        let zero_sigma = crate::aberration::sample_profile(1540.0, 0.0, 32, 3, 99).unwrap();
        assert_eq!(
            das_all(&cube, &flat, &apod, &cfg).unwrap(),
            das_all(&cube, &zero_sigma, &apod, &cfg).unwrap()
        );
        let bad = AberrationProfile::constant(1540.0, 31, 3);
        assert!(das_all(&cube, &bad, &apod, &cfg).is_err());
    }

    #[test]
    fn select_reorders_slabs() {
        let data = Array3::from_shape_fn((2, 2, 3), |(a, l, k)| (a + 2 * l + 10 * k) as f64);
        let t = DasTensor::new(data, vec![-1.0, 0.0, 1.0]).unwrap();
        let sub = t.select(&[2, 0]).unwrap();
        assert_eq!(sub.slab(0), t.slab(2));
        assert_eq!(sub.angles, vec![1.0, -1.0]);
        assert!(t.select(&[3]).is_err());
    }
}
