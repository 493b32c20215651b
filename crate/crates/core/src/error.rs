use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid header: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),

    #[error("compressed NIfTI unsupported")]
    CompressedNifti,

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("invalid NIfTI: {0}")]
    Nifti(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("expected dtype {expected}, found {actual}")]
    DtypeMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(f64),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing hyperparameter {0}")]
    MissingHyperparameter(&'static str),

    #[error("degenerate WCE weight: {0}")]
    DegenerateWceWeight(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Header {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
