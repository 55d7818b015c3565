use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config file line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("acquisition duration {duration:.3e} s is shorter than the required {required:.3e} s")]
    DurationTooShort { duration: f64, required: f64 },

    #[error("scatterer at x = {x:.4e} m lies outside the allowed lateral range ±{limit:.4e} m")]
    ScattererOutOfRange { x: f64, limit: f64 },

    #[error("empty planewave subset")]
    EmptySubset,

    #[error("region of interest: {0}")]
    Roi(String),

    #[error("CNR undefined: both regions have zero variance")]
    UndefinedCnr,

    #[error("envelope is identically zero")]
    ZeroEnvelope,

    #[error("patch {patch:?} larger than image {image:?}")]
    PatchTooLarge { patch: (usize, usize), image: (usize, usize) },

    #[error("bad blob magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unknown blob dtype code {0}")]
    UnknownDtype(u8),

    #[error("blob dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },

    #[error("truncated blob: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
