//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time index {index} out of range 0..={max}")]
    TimeIndexOutOfRange { index: usize, max: usize },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("gauge scale must be nonzero")]
    ZeroGaugeScale,

    #[error("singular Jacobian in Newton solve at (i={i}, j={j})")]
    SingularJacobian { i: usize, j: usize },

    #[error("Newton iteration did not converge at (i={i}, j={j}): residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        i: usize,
        j: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("mode {n} is resonant: dispersion relation has no real wave speed")]
    ResonantMode { n: i64 },

    #[error("mode {n} invalid on a mesh with {m} spatial cells")]
    InvalidMode { n: i64, m: usize },

    #[error("checkpoint architecture mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
