//! Coherent plane-wave compounding.

use ndarray::Array2;

use crate::beamform::DasTensor;
use crate::config::decimation_indices;
use crate::error::{Error, Result};

/// Compounded RF image on the `A x L` grid (before envelope detection).
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundImage {
    pub v: Array2<f64>,
}

/// Average of the selected plane-wave slabs.
///
/// Averaging instead of summing keeps images compounded from different
/// plane-wave counts on one brightness scale.
pub fn cpc(tensor: &DasTensor, subset: &[usize]) -> Result<CompoundImage> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let k = tensor.dim().2;
    let mut seen = vec![false; k];
    for &i in subset {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!(
                "subset index {i} is out of range or repeated (K = {k})"
            )));
        }
    }
    let mut v = tensor.slab(subset[0]).to_owned();
    for &i in &subset[1..] {
        v += &tensor.slab(i);
    }
    v /= subset.len() as f64;
    Ok(CompoundImage { v })
}

/// Compounds every slab of the tensor.
pub fn cpc_all(tensor: &DasTensor) -> Result<CompoundImage> {
    let all: Vec<usize> = (0..tensor.dim().2).collect();
    cpc(tensor, &all)
}

/// Symmetric subset of `k` plane-wave indices out of `k_full`.
pub fn select_subset(k_full: usize, k: usize) -> Result<Vec<usize>> {
    decimation_indices(k_full, k)
}
