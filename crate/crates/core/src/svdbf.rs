//! Patch-wise SVD beamformer.
//!
//! The DAS tensor is converted to IQ along depth, cut into non-overlapping
//! `A_r x L_r` patches, and each patch is reshaped into a Casorati matrix
//! (pixels x plane waves). The dominant singular pair keeps the component that
//! is most coherent across transmit angles; its spatial part `u1 * s1` replaces
//! the plain angular average for that patch.

use faer::Mat;
use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::beamform::DasTensor;
use crate::compound::CompoundImage;
use crate::error::{Error, Result};
use crate::postproc::{analytic_columns, log_compress, BmodeImage};

pub const DEFAULT_PATCH: (usize, usize) = (32, 32);

/// Relative residual `|C v1 - s1 u1| / s1` above which a decomposition is
/// treated as failed.
const SVD_RESIDUAL_TOL: f64 = 1e-8;

/// IQ version of a DAS tensor, `A x L x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqTensor {
    pub zt: Array3<Complex64>,
}

/// Hilbert transform along depth of every `(scanline, plane wave)` column.
pub fn iq_tensor(tensor: &DasTensor) -> IqTensor {
    let (a, l, k) = tensor.dim();
    let mut zt = Array3::<Complex64>::zeros((a, l, k));
    for kk in 0..k {
        let slab = analytic_columns(tensor.slab(kk));
        zt.slice_mut(s![.., .., kk]).assign(&slab);
    }
    IqTensor { zt }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatch {
    pub origin: (usize, usize),
    pub data: Array3<Complex64>,
}

impl RoiPatch {
    pub fn shape(&self) -> (usize, usize) {
        let (a, l, _) = self.data.dim();
        (a, l)
    }

    pub fn extract(iq: &IqTensor, origin: (usize, usize), shape: (usize, usize)) -> Result<Self> {
        let (a, l, _) = iq.zt.dim();
        let (a0, l0) = origin;
        if a0 + shape.0 > a || l0 + shape.1 > l || shape.0 == 0 || shape.1 == 0 {
            return Err(Error::PatchTooLarge {
                patch: shape,
                image: (a, l),
            });
        }
        Ok(RoiPatch {
            origin,
            data: iq
                .zt
                .slice(s![a0..a0 + shape.0, l0..l0 + shape.1, ..])
                .to_owned(),
        })
    }
}

/// Column `k` is slab `k` flattened column-major (depth index fastest).
pub fn casorati(patch: &RoiPatch) -> Mat<Complex64> {
    let (ar, lr, k) = patch.data.dim();
    Mat::from_fn(ar * lr, k, |row, col| patch.data[[row % ar, row / ar, col]])
}

/// Inverse of [`casorati`].
pub fn from_casorati(matrix: &Mat<Complex64>, shape: (usize, usize)) -> Result<Array3<Complex64>> {
    let (ar, lr) = shape;
    if matrix.nrows() != ar * lr {
        return Err(Error::DimensionMismatch(format!(
            "{} rows cannot be reshaped to {ar}x{lr}",
            matrix.nrows()
        )));
    }
    Ok(Array3::from_shape_fn((ar, lr, matrix.ncols()), |(a, l, k)| matrix[(a + ar * l, k)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Output {
    pub image: Array2<Complex64>,
    pub singular_value: f64,
    /// SVD failed or its leading pair did not reconstruct; `image` is the plain angular mean.
    pub fallback: bool,
}

fn inner(a: impl Iterator<Item = Complex64>, b: impl Iterator<Item = Complex64>) -> Complex64 {
    a.zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn reshape_column(v: &[Complex64], (ar, lr): (usize, usize)) -> Array2<Complex64> {
    Array2::from_shape_fn((ar, lr), |(a, l)| v[a + ar * l])
}

/// Rank-1 angular-coherence compounding of one patch.
///
/// Returns `u1 * s1` reshaped to the patch, with its global phase chosen so
/// that the inner product with the plain angular mean is real and
/// non-negative. When that inner product vanishes the slab carrying the
/// largest right-singular weight is used as the phase reference instead.
pub fn rank1_compound(patch: &RoiPatch) -> Result<Rank1Output> {
    let shape = patch.shape();
    let k = patch.data.dim().2;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "rank-1 compounding needs at least 2 plane waves, got {k}"
        )));
    }
    let c = casorati(patch);
    let mean: Vec<Complex64> = (0..c.nrows())
        .map(|r| c.row(r).iter().sum::<Complex64>() / k as f64)
        .collect();

    let fallback = || Rank1Output {
        image: reshape_column(&mean, shape),
        singular_value: f64::NAN,
        fallback: true,
    };
    let Ok(svd) = c.thin_svd() else {
        return Ok(fallback());
    };
    // singular values come sorted in non-increasing order
    let s1 = svd.S().column_vector()[0].re;
    if s1 == 0.0 {
        return Ok(Rank1Output {
            image: Array2::zeros(shape),
            singular_value: 0.0,
            fallback: false,
        });
    }
    let v = svd.V();
    let mut out: Vec<Complex64> = svd.U().col(0).iter().map(|&x| x * s1).collect();
    let cv = &c * v.col(0);
    let residual = cv.iter().zip(&out).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    if !(residual <= SVD_RESIDUAL_TOL * s1) {
        return Ok(fallback());
    }

    let out_norm = out.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let mean_norm = mean.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let mut ip = inner(out.iter().copied(), mean.iter().copied());
    if ip.norm() <= 1e-12 * out_norm * mean_norm || mean_norm == 0.0 {
        let anchor = (0..k)
            .max_by(|&a, &b| v[(a, 0)].norm().total_cmp(&v[(b, 0)].norm()))
            .expect("k >= 2");
        ip = inner(out.iter().copied(), c.col(anchor).iter().copied());
    }
    if ip.norm() > 0.0 {
        let phase = ip / ip.norm();
        out.iter_mut().for_each(|x| *x *= phase);
    }
    Ok(Rank1Output {
        image: reshape_column(&out, shape),
        singular_value: s1,
        fallback: false,
    })
}

/// Output of the SVD beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdImage {
    /// Complex (already analytic) compounded image.
    pub iq: Array2<Complex64>,
    pub patches: usize,
    pub fallback_patches: usize,
}

impl SvdImage {
    /// Real part, for storage alongside CPC images.
    pub fn compound(&self) -> CompoundImage {
        CompoundImage {
            v: self.iq.mapv(|c| c.re),
        }
    }

    pub fn envelope(&self) -> Array2<f64> {
        self.iq.mapv(|c| c.norm())
    }

    pub fn bmode(&self, dynamic_range: f64) -> Result<BmodeImage> {
        log_compress(&self.envelope(), dynamic_range)
    }
}

/// Patch origins and shapes tiling `rows x cols`; edge tiles may be smaller.
pub fn tile(rows: usize, cols: usize, patch: (usize, usize)) -> Vec<((usize, usize), (usize, usize))> {
    let mut tiles = Vec::new();
    for a0 in (0..rows).step_by(patch.0) {
        for l0 in (0..cols).step_by(patch.1) {
            tiles.push(((a0, l0), (patch.0.min(rows - a0), patch.1.min(cols - l0))));
        }
    }
    tiles
}

pub fn svd_beamform(tensor: &DasTensor, patch_shape: (usize, usize)) -> Result<SvdImage> {
    let (a, l, _) = tensor.dim();
    if patch_shape.0 == 0 || patch_shape.1 == 0 || patch_shape.0 > a || patch_shape.1 > l {
        return Err(Error::PatchTooLarge {
            patch: patch_shape,
            image: (a, l),
        });
    }
    let iq = iq_tensor(tensor);
    let tiles = tile(a, l, patch_shape);
    let results = tiles
        .par_iter()
        .map(|&(origin, shape)| {
            let patch = RoiPatch::extract(&iq, origin, shape)?;
            rank1_compound(&patch).map(|r| (origin, r))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Array2::<Complex64>::zeros((a, l));
    let mut fallback_patches = 0;
    for ((a0, l0), r) in &results {
        let (ar, lr) = r.image.dim();
        out.slice_mut(s![*a0..a0 + ar, *l0..l0 + lr]).assign(&r.image);
        fallback_patches += r.fallback as usize;
    }
    Ok(SvdImage {
        iq: out,
        patches: results.len(),
        fallback_patches,
    })
}
