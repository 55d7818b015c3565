//! Stochastic speed-of-sound perturbation per (scanline, plane wave).
//!
//! Each cell is `c + w` with `w ~ U(-sigma, sigma)`. Draws come from a
//! ChaCha8 stream seeded with `seed`; cell `(l, k)` reads the 64-bit word pair
//! at position `l * K + k`, so any cell can be regenerated independently and
//! the fill order does not matter.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Perturbation half-widths used for the self-supervised corruption, in m/s.
pub const SIGMA_LEVELS: [f64; 3] = [0.0, 1.54, 3.85];

pub fn sigma_levels() -> Vec<f64> {
    SIGMA_LEVELS.to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AberrationProfile {
    /// `L x K` speeds of sound in m/s.
    pub sos: Array2<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl AberrationProfile {
    /// A profile with every cell equal to `c`.
    pub fn constant(c: f64, lines: usize, planewaves: usize) -> Self {
        AberrationProfile {
            sos: Array2::from_elem((lines, planewaves), c),
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn num_lines(&self) -> usize {
        self.sos.nrows()
    }

    pub fn num_planewaves(&self) -> usize {
        self.sos.ncols()
    }

    /// Keeps only the given plane-wave columns.
    pub fn select_planewaves(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.num_planewaves()) {
            return Err(Error::InvalidArgument(format!("planewave index {bad} out of range")));
        }
        Ok(AberrationProfile {
            sos: self.sos.select(ndarray::Axis(1), indices),
            sigma: self.sigma,
            seed: self.seed,
        })
    }
}

/// Uniform draw in `[0, 1)` for stream position `index`.
fn unit_draw(rng: &mut ChaCha8Rng, index: u64) -> f64 {
    rng.set_word_pos(2 * index as u128);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn sample_profile(c: f64, sigma: f64, lines: usize, planewaves: usize, seed: u64) -> Result<AberrationProfile> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("sigma must be non-negative".into()));
    }
    if lines == 0 || planewaves == 0 {
        return Err(Error::InvalidArgument("profile dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sos = Array2::from_shape_fn((lines, planewaves), |(l, k)| {
        if sigma == 0.0 {
            return c;
        }
        let u = unit_draw(&mut rng, (l * planewaves + k) as u64);
        c + sigma * (2.0 * u - 1.0)
    });
    Ok(AberrationProfile { sos, sigma, seed })
}
