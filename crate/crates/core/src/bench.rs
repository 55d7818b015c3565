//! Wall-clock comparison of the compounding methods.

use std::fmt;
use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beamform::DasTensor;
use crate::compound::cpc_all;
use crate::error::{Error, Result};
use crate::svdbf::{svd_beamform, DEFAULT_PATCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Cpc,
    Svd,
    CnnInfer,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Cpc => "cpc",
            BenchMethod::Svd => "svd",
            BenchMethod::CnnInfer => "cnn-infer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub method: BenchMethod,
    pub k: usize,
    /// Median over the repetitions.
    pub wall_ms: f64,
    pub rows: usize,
    pub cols: usize,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "method,K,wall_ms,rows,cols";
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{:.3},{},{}", self.method.name(), self.k, self.wall_ms, self.rows, self.cols)
    }
}

/// Seeded random tensor with the requested shape.
pub fn bench_tensor(rows: usize, cols: usize, k: usize, seed: u64) -> DasTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn((rows, cols, k), || rng.gen_range(-1.0..1.0));
    DasTensor::new(data, vec![0.0; k]).expect("finite random tensor")
}

fn median_ms(reps: usize, mut run: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        run()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    // clock granularity can round a very fast run down to zero
    Ok(times[reps / 2].max(1e-6))
}

/// Times CPC and SVD compounding of one tensor on a pool of `threads`
/// workers. At least three repetitions are run.
pub fn run_bench(k: usize, rows: usize, cols: usize, reps: usize, threads: usize) -> Result<Vec<BenchReport>> {
    if k < 2 || rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!("bench needs K >= 2 and a non-empty grid (got {rows}x{cols}, K={k})")));
    }
    let reps = reps.max(3);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tensor = bench_tensor(rows, cols, k, 0x5eed);
    let patch = (DEFAULT_PATCH.0.min(rows), DEFAULT_PATCH.1.min(cols));
    pool.install(|| {
        let cpc = median_ms(reps, || cpc_all(&tensor).map(drop))?;
        let svd = median_ms(reps, || svd_beamform(&tensor, patch).map(drop))?;
        let report = |method, wall_ms| BenchReport { method, k, wall_ms, rows, cols };
        Ok(vec![report(BenchMethod::Cpc, cpc), report(BenchMethod::Svd, svd)])
    })
}
