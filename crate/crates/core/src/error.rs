use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes {found:?}, expected \"EVSF\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported EVSF version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported EVSF dtype {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate metric at flat index {index} (det g = {det})")]
    DegenerateMetric { index: usize, det: f64 },

    #[error("vector field is not tangent at flat index {0}")]
    NotTangent(usize),

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("seed ({0}, {1}) lies outside the chart domain")]
    SeedOutOfDomain(f64, f64),

    #[error("gaussian sigma must be positive and finite, got {0}")]
    BadSigma(f64),

    #[error("no cell centres detected in frame {frame}")]
    NoCenters { frame: usize },

    #[error("surface fit is singular: {0}")]
    SingularFit(String),

    #[error("advected texture leaves the chart domain: {0}")]
    MotionExitsDomain(String),

    #[error("malformed config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
