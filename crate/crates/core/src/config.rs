//! Acquisition and reconstruction parameters.
//!
//! Everything downstream reads geometry from here: the linear-array probe,
//! the plane-wave angle set (and its symmetric subsets), and the pixel grid.
//! Scanlines sit at the element centers, so the grid always has one column
//! per element.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::path::Path;

use crate::beamform::{ApodizationSpec, Window};
use crate::error::{Error, Result};

/// Linear-array transducer description.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub num_elements: usize,
    /// Element center spacing in meters.
    pub pitch: f64,
    pub element_width: f64,
    pub center_frequency: f64,
    pub sampling_frequency: f64,
    /// Size of the full plane-wave sequence (odd, so that 0 rad is included).
    pub num_planewaves: usize,
}

/// L3-12H linear array: 192 elements, 0.2 mm pitch, 8.48 MHz carrier,
/// 40 MHz sampling, 31 plane waves.
pub fn default_probe() -> ProbeConfig {
    ProbeConfig {
        num_elements: 192,
        pitch: 0.2e-3,
        element_width: 0.14e-3,
        center_frequency: 8.48e6,
        sampling_frequency: 40e6,
        num_planewaves: 31,
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        default_probe()
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::InvalidConfig("num_elements must be >= 2".into()));
        }
        if !(self.element_width > 0.0 && self.pitch > self.element_width) {
            return Err(Error::InvalidConfig(
                "require pitch > element_width > 0".into(),
            ));
        }
        if !(self.center_frequency > 0.0
            && self.center_frequency < self.sampling_frequency / 2.0)
        {
            return Err(Error::InvalidConfig(
                "require 0 < center_frequency < sampling_frequency / 2".into(),
            ));
        }
        if self.num_planewaves.is_multiple_of(2) {
            return Err(Error::InvalidConfig("num_planewaves must be odd".into()));
        }
        Ok(())
    }

    /// Lateral element centers, symmetric about 0.
    pub fn element_positions(&self) -> Vec<f64> {
        let mid = (self.num_elements as f64 - 1.0) / 2.0;
        (0..self.num_elements)
            .map(|i| (i as f64 - mid) * self.pitch)
            .collect()
    }

    /// Distance between the outermost element centers.
    pub fn lateral_extent(&self) -> f64 {
        (self.num_elements as f64 - 1.0) * self.pitch
    }
}

/// Transmit angles in radians, ascending and symmetric about zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSet {
    pub angles: Vec<f64>,
    /// Position of each angle within the full sequence it was drawn from.
    pub indices: Vec<usize>,
}

impl AngleSet {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

/// Symmetric decimation of `0..k_full` down to `k` indices.
///
/// The left half uses `round(i * (k_full - 1) / (k - 1))` (ties rounded up) and
/// the right half mirrors it, so the result is symmetric about the center index
/// and always keeps both extremes.
pub fn decimation_indices(k_full: usize, k: usize) -> Result<Vec<usize>> {
    if k_full.is_multiple_of(2) || k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "planewave counts must be odd (got full={k_full}, subset={k})"
        )));
    }
    if k > k_full {
        return Err(Error::InvalidArgument(format!(
            "subset size {k} exceeds full set size {k_full}"
        )));
    }
    if k == 1 {
        return Ok(vec![(k_full - 1) / 2]);
    }
    let (n, q) = (k_full - 1, k - 1);
    let half = q / 2;
    let mut out = vec![0usize; k];
    for i in 0..=half {
        let idx = (2 * i * n + q) / (2 * q);
        out[i] = idx;
        out[q - i] = n - idx;
    }
    Ok(out)
}

/// `k_full` angles uniformly spaced on `[-span_deg, +span_deg]`, decimated to `subset_k`.
pub fn make_angle_set(k_full: usize, span_deg: f64, subset_k: usize) -> Result<AngleSet> {
    if !(span_deg > 0.0) {
        return Err(Error::InvalidArgument("angle span must be positive".into()));
    }
    let indices = decimation_indices(k_full, subset_k)?;
    let span = span_deg.to_radians();
    if span >= FRAC_PI_4 {
        return Err(Error::InvalidArgument(
            "angle span must stay below 45 degrees".into(),
        ));
    }
    let mid = (k_full as f64 - 1.0) / 2.0;
    let step = if k_full > 1 { span / mid } else { 0.0 };
    let angles = indices
        .iter()
        .map(|&j| (j as f64 - mid) * step)
        .collect();
    Ok(AngleSet { angles, indices })
}

/// Reconstruction grid and display settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingConfig {
    pub depth_start: f64,
    pub depth_end: f64,
    pub num_depth_samples: usize,
    pub num_scanlines: usize,
    pub assumed_sos: f64,
    pub dynamic_range: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        // 5-55 mm at ~39 um axial spacing (under a quarter wavelength at 8.48 MHz)
        ImagingConfig {
            depth_start: 5e-3,
            depth_end: 55e-3,
            num_depth_samples: 1280,
            num_scanlines: 192,
            assumed_sos: 1540.0,
            dynamic_range: 60.0,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self, probe: &ProbeConfig) -> Result<()> {
        if !(self.depth_start >= 0.0 && self.depth_start < self.depth_end) {
            return Err(Error::InvalidConfig(
                "require 0 <= depth_start < depth_end".into(),
            ));
        }
        if self.num_depth_samples < 1 {
            return Err(Error::InvalidConfig("num_depth_samples must be >= 1".into()));
        }
        if self.num_scanlines != probe.num_elements {
            return Err(Error::InvalidConfig(format!(
                "num_scanlines ({}) must equal num_elements ({})",
                self.num_scanlines, probe.num_elements
            )));
        }
        if !(1000.0..=2000.0).contains(&self.assumed_sos) {
            return Err(Error::InvalidConfig(
                "assumed_sos must lie in [1000, 2000] m/s".into(),
            ));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidConfig("dynamic_range must be positive".into()));
        }
        Ok(())
    }

    pub fn depth_spacing(&self) -> f64 {
        if self.num_depth_samples > 1 {
            (self.depth_end - self.depth_start) / (self.num_depth_samples as f64 - 1.0)
        } else {
            0.0
        }
    }

    pub fn depths(&self) -> Vec<f64> {
        let dz = self.depth_spacing();
        (0..self.num_depth_samples)
            .map(|a| self.depth_start + a as f64 * dz)
            .collect()
    }
}

/// Pixel coordinates: depths (length A) and scanline laterals (length L = Ne).
pub fn pixel_grid(cfg: &ImagingConfig, probe: &ProbeConfig) -> (Vec<f64>, Vec<f64>) {
    (cfg.depths(), probe.element_positions())
}

/// Everything the command-line tools read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub probe: ProbeConfig,
    pub imaging: ImagingConfig,
    pub angle_span_deg: f64,
    pub apodization: ApodizationSpec,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            probe: default_probe(),
            imaging: ImagingConfig::default(),
            angle_span_deg: 15.0,
            apodization: ApodizationSpec::default(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.imaging.validate(&self.probe)?;
        self.apodization.validate()?;
        make_angle_set(self.probe.num_planewaves, self.angle_span_deg, 1)?;
        Ok(())
    }

    pub fn angle_set(&self, subset_k: usize) -> Result<AngleSet> {
        make_angle_set(self.probe.num_planewaves, self.angle_span_deg, subset_k)
    }

    pub fn full_angle_set(&self) -> Result<AngleSet> {
        self.angle_set(self.probe.num_planewaves)
    }

    /// Parses flat `key=value` text. Blank lines and `#` comments are skipped;
    /// keys not listed in [`SystemConfig::to_text`] are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::ConfigParse { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            let count = || {
                value
                    .parse::<usize>()
                    .map_err(|e| err(format!("{key}: {e}")))
            };
            match key {
                "num_elements" => cfg.probe.num_elements = count()?,
                "pitch" => cfg.probe.pitch = float()?,
                "element_width" => cfg.probe.element_width = float()?,
                "center_frequency" => cfg.probe.center_frequency = float()?,
                "sampling_frequency" => cfg.probe.sampling_frequency = float()?,
                "num_planewaves" => cfg.probe.num_planewaves = count()?,
                "depth_start" => cfg.imaging.depth_start = float()?,
                "depth_end" => cfg.imaging.depth_end = float()?,
                "num_depth_samples" => cfg.imaging.num_depth_samples = count()?,
                "num_scanlines" => cfg.imaging.num_scanlines = count()?,
                "assumed_sos" => cfg.imaging.assumed_sos = float()?,
                "dynamic_range" => cfg.imaging.dynamic_range = float()?,
                "angle_span_deg" => cfg.angle_span_deg = float()?,
                "f_number" => cfg.apodization.f_number = float()?,
                "apod_window" => {
                    cfg.apodization.window = match value {
                        "hann" => Window::Hann,
                        "rectangular" => Window::Rectangular,
                        other => return Err(err(format!("unknown window {other:?}"))),
                    }
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let p = &self.probe;
        let im = &self.imaging;
        let mut s = String::new();
        let _ = writeln!(s, "num_elements={}", p.num_elements);
        let _ = writeln!(s, "pitch={:e}", p.pitch);
        let _ = writeln!(s, "element_width={:e}", p.element_width);
        let _ = writeln!(s, "center_frequency={:e}", p.center_frequency);
        let _ = writeln!(s, "sampling_frequency={:e}", p.sampling_frequency);
        let _ = writeln!(s, "num_planewaves={}", p.num_planewaves);
        let _ = writeln!(s, "depth_start={:e}", im.depth_start);
        let _ = writeln!(s, "depth_end={:e}", im.depth_end);
        let _ = writeln!(s, "num_depth_samples={}", im.num_depth_samples);
        let _ = writeln!(s, "num_scanlines={}", im.num_scanlines);
        let _ = writeln!(s, "assumed_sos={:e}", im.assumed_sos);
        let _ = writeln!(s, "dynamic_range={:e}", im.dynamic_range);
        let _ = writeln!(s, "angle_span_deg={:e}", self.angle_span_deg);
        let _ = writeln!(s, "apod_window={}", self.apodization.window.name());
        let _ = writeln!(s, "f_number={:e}", self.apodization.f_number);
        s
    }
}
