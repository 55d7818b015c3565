//! IQ conversion, envelope detection and log compression.
//!
//! The analytic signal is computed along depth (one column per scanline) with
//! an exact-length DFT: positive-frequency bins doubled, negative bins zeroed,
//! DC and (for even lengths) Nyquist left as they are.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::compound::CompoundImage;
use crate::error::{Error, Result};

/// Complex analytic image, `A x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqImage {
    pub iq: Array2<Complex64>,
}

/// Log-compressed image in dB, clamped to `[-dynamic_range, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BmodeImage {
    pub db: Array2<f64>,
    pub dynamic_range: f64,
}

/// Planned forward/inverse transforms for one column length.
#[derive(Clone)]
pub struct AnalyticSignal {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl AnalyticSignal {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        AnalyticSignal {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// Replaces `buf` (real input in the real parts) with its analytic signal.
    pub fn apply(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        let n = self.len;
        if n < 2 {
            return;
        }
        self.forward.process(buf);
        let positive_end = n.div_ceil(2); // exclusive; excludes Nyquist for even n
        for v in &mut buf[1..positive_end] {
            *v *= 2.0;
        }
        for v in &mut buf[n / 2 + 1..] {
            *v = Complex64::new(0.0, 0.0);
        }
        self.inverse.process(buf);
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn of_real(&self, column: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = column.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply(&mut buf);
        buf
    }
}

pub fn analytic_signal(column: &[f64]) -> Vec<Complex64> {
    AnalyticSignal::new(column.len()).of_real(column)
}

/// Analytic signal of every column (along axis 0) of a real image.
pub fn analytic_columns(img: ArrayView2<'_, f64>) -> Array2<Complex64> {
    let (rows, _) = img.dim();
    let transform = AnalyticSignal::new(rows);
    let mut out = img.mapv(|x| Complex64::new(x, 0.0));
    Zip::from(out.lanes_mut(Axis(0))).par_for_each(|mut col| {
        let mut buf = col.to_vec();
        transform.apply(&mut buf);
        col.iter_mut().zip(buf).for_each(|(dst, v)| *dst = v);
    });
    out
}

pub fn iq_image(img: &CompoundImage) -> IqImage {
    IqImage {
        iq: analytic_columns(img.v.view()),
    }
}

/// Envelope `|analytic signal|`, column by column.
pub fn envelope(img: &CompoundImage) -> Array2<f64> {
    iq_image(img).iq.mapv(|c| c.norm())
}

/// `clamp(20 log10(env / max(env)), -dynamic_range, 0)`.
pub fn log_compress(env: &Array2<f64>, dynamic_range: f64) -> Result<BmodeImage> {
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidArgument("dynamic range must be positive".into()));
    }
    if env.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("envelope must be finite and non-negative".into()));
    }
    let peak = env.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::ZeroEnvelope);
    }
    let db = env.mapv(|v| (20.0 * (v / peak).log10()).clamp(-dynamic_range, 0.0));
    Ok(BmodeImage { db, dynamic_range })
}

/// Envelope detection followed by log compression.
pub fn bmode(img: &CompoundImage, dynamic_range: f64) -> Result<BmodeImage> {
    log_compress(&envelope(img), dynamic_range)
}
