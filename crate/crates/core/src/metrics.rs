//! Region contrast metrics: CR, CNR and GCNR.
//!
//! Metrics are computed on dB pixel values by default. [`Domain::Linear`]
//! converts back to linear envelope amplitude first.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::postproc::BmodeImage;
use crate::rfsim::PhantomGeometry;

pub const DEFAULT_GCNR_BINS: usize = 256;
pub const MIN_ROI_PIXELS: usize = 16;

/// Region of interest in grid coordinates: `x` is the scanline (column)
/// index, `z` the depth (row) index. Fractional values are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiSpec {
    /// Axis-aligned ellipse; `rx == rz` gives a circle in index space.
    Circle { x: f64, z: f64, rx: f64, rz: f64 },
    /// Inclusive bounds.
    Rect { x0: f64, z0: f64, x1: f64, z1: f64 },
}

impl RoiSpec {
    pub fn circle(x: f64, z: f64, r: f64) -> Self {
        RoiSpec::Circle { x, z, rx: r, rz: r }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (l, a) = (col as f64, row as f64);
        match *self {
            RoiSpec::Circle { x, z, rx, rz } => ((l - x) / rx).powi(2) + ((a - z) / rz).powi(2) <= 1.0,
            RoiSpec::Rect { x0, z0, x1, z1 } => l >= x0 && l <= x1 && a >= z0 && a <= z1,
        }
    }

    /// `(row, col)` of every pixel inside the region on a `rows x cols` grid.
    pub fn pixels(&self, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..rows {
            for l in 0..cols {
                if self.contains(a, l) {
                    out.push((a, l));
                }
            }
        }
        out
    }
}

impl FromStr for RoiSpec {
    type Err = Error;

    /// `circle:x,z,r`, `circle:x,z,rx,rz` or `rect:x0,z0,x1,z1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Roi(format!("cannot parse {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums = rest
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        match (kind, nums.as_slice()) {
            ("circle", &[x, z, r]) if r > 0.0 => Ok(RoiSpec::circle(x, z, r)),
            ("circle", &[x, z, rx, rz]) if rx > 0.0 && rz > 0.0 => Ok(RoiSpec::Circle { x, z, rx, rz }),
            ("rect", &[x0, z0, x1, z1]) => Ok(RoiSpec::Rect { x0, z0, x1, z1 }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for RoiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RoiSpec::Circle { x, z, rx, rz } if rx == rz => write!(f, "circle:{x},{z},{rx}"),
            RoiSpec::Circle { x, z, rx, rz } => write!(f, "circle:{x},{z},{rx},{rz}"),
            RoiSpec::Rect { x0, z0, x1, z1 } => write!(f, "rect:{x0},{z0},{x1},{z1}"),
        }
    }
}

/// Lesion and background regions for a cyst phantom, in grid coordinates.
///
/// The lesion region is a disc of 0.8 lesion radii. The background is a
/// rectangle to the lesion's right, spanning 1.25 to 2.05 radii laterally
/// and one radius either side of the lesion depth.
pub fn lesion_rois(geom: &PhantomGeometry, sys: &SystemConfig) -> (RoiSpec, RoiSpec) {
    let x_first = sys.probe.element_positions()[0];
    let pitch = sys.probe.pitch;
    let dz = sys.imaging.depth_spacing();
    let col = |x: f64| (x - x_first) / pitch;
    let row = |z: f64| (z - sys.imaging.depth_start) / dz;
    let (cx, cz) = geom.lesion_center;
    let r = geom.lesion_radius;
    let lesion = RoiSpec::Circle {
        x: col(cx),
        z: row(cz),
        rx: 0.8 * r / pitch,
        rz: 0.8 * r / dz,
    };
    let background = RoiSpec::Rect {
        x0: col(cx + 1.25 * r),
        z0: row(cz - r),
        x1: col(cx + 2.05 * r),
        z1: row(cz + r),
    };
    (lesion, background)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Db,
    Linear,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Db => "db",
            Domain::Linear => "linear",
        }
    }

    pub fn values(self, img: &BmodeImage) -> Array2<f64> {
        match self {
            Domain::Db => img.db.clone(),
            Domain::Linear => img.db.mapv(|d| 10f64.powf(d / 20.0)),
        }
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "db" => Ok(Domain::Db),
            "linear" => Ok(Domain::Linear),
            other => Err(Error::InvalidArgument(format!("unknown metric domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cr: f64,
    pub cnr: f64,
    pub gcnr: f64,
    pub pixels_a: usize,
    pub pixels_b: usize,
    pub domain: Domain,
}

/// Pixel values of two disjoint regions.
fn region_pair(values: ArrayView2<'_, f64>, ra: &RoiSpec, rb: &RoiSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let (rows, cols) = values.dim();
    let pa = ra.pixels(rows, cols);
    let pb = rb.pixels(rows, cols);
    for (name, p) in [("Ra", &pa), ("Rb", &pb)] {
        if p.is_empty() {
            return Err(Error::Roi(format!("{name} is empty")));
        }
        if p.len() < MIN_ROI_PIXELS {
            return Err(Error::Roi(format!(
                "{name} covers {} pixels, fewer than {MIN_ROI_PIXELS}",
                p.len()
            )));
        }
    }
    if pa.iter().any(|&(a, l)| rb.contains(a, l)) {
        return Err(Error::Roi("Ra and Rb overlap".into()));
    }
    let pick = |p: &[(usize, usize)]| p.iter().map(|&ix| values[ix]).collect::<Vec<_>>();
    Ok((pick(&pa), pick(&pb)))
}

/// Mean and population variance.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn cr_values(a: &[f64], b: &[f64]) -> f64 {
    (moments(a).0 - moments(b).0).abs()
}

pub fn cnr_values(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::UndefinedCnr);
    }
    Ok((ma - mb).abs() / (va + vb).sqrt())
}

/// One minus the overlap of the two normalized histograms, on shared bin
/// edges spanning the combined range.
pub fn gcnr_values(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument("gcnr needs at least 2 bins".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Roi("empty region".into()));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(0.0);
    }
    let histogram = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        let scale = bins as f64 / (hi - lo);
        for &x in v {
            let i = (((x - lo) * scale) as usize).min(bins - 1);
            h[i] += 1.0;
        }
        let n = v.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (histogram(a), histogram(b));
    let overlap: f64 = ha.iter().zip(&hb).map(|(x, y)| x.min(*y)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

pub fn cr(img: &BmodeImage, ra: &RoiSpec, rb: &RoiSpec) -> Result<f64> {
    let (a, b) = region_pair(img.db.view(), ra, rb)?;
    Ok(cr_values(&a, &b))
}

pub fn cnr(img: &BmodeImage, ra: &RoiSpec, rb: &RoiSpec) -> Result<f64> {
    let (a, b) = region_pair(img.db.view(), ra, rb)?;
    cnr_values(&a, &b)
}

pub fn gcnr(img: &BmodeImage, ra: &RoiSpec, rb: &RoiSpec, bins: usize) -> Result<f64> {
    let (a, b) = region_pair(img.db.view(), ra, rb)?;
    gcnr_values(&a, &b, bins)
}

/// All three metrics on raw pixel values.
pub fn evaluate_values(values: ArrayView2<'_, f64>, ra: &RoiSpec, rb: &RoiSpec, bins: usize, domain: Domain) -> Result<MetricsReport> {
    let (a, b) = region_pair(values, ra, rb)?;
    Ok(MetricsReport {
        cr: cr_values(&a, &b),
        cnr: cnr_values(&a, &b)?,
        gcnr: gcnr_values(&a, &b, bins)?,
        pixels_a: a.len(),
        pixels_b: b.len(),
        domain,
    })
}

pub fn evaluate(img: &BmodeImage, ra: &RoiSpec, rb: &RoiSpec, domain: Domain) -> Result<MetricsReport> {
    let values = domain.values(img);
    evaluate_values(values.view(), ra, rb, DEFAULT_GCNR_BINS, domain)
}
