use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud must contain at least one point")]
    EmptyCloud,

    #[error("point {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },

    #[error("neighbor count k={k} out of range for {n} points (include_self={include_self})")]
    NeighborCount {
        k: usize,
        n: usize,
        include_self: bool,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("unknown shape kind `{0}`")]
    UnknownShape(String),

    #[error("correspondence length mismatch: {src} source vs {dst} target points")]
    LengthMismatch { src: usize, dst: usize },

    #[error("at least {required} correspondences required, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("margins must satisfy 0 <= m_n < m_p <= 1 (got m_p={m_p}, m_n={m_n})")]
    MarginOrder { m_p: f64, m_n: f64 },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
