use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("failed to write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("degenerate histogram: all values are identical")]
    DegenerateHistogram,
    #[error("empty mask")]
    EmptyMask,
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index} has zero affinity to every point; drop it before normalizing")]
    ZeroRow { index: usize },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("malformed kernel cache: {0}")]
    Cache(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
