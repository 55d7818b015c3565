//! Plane-wave ultrasound imaging: simulation, delay-and-sum beamforming,
//! coherent and SVD-based compounding, image metrics and dataset export.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aberration;
pub mod beamform;
pub mod bench;
pub mod compound;
pub mod config;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod postproc;
pub mod rfsim;
pub mod svdbf;

pub use error::{Error, Result};
