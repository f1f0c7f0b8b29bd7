use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the shape-model toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("requested {requested} modes but only {available} are available")]
    RankExceeded { requested: usize, available: usize },

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("point {index} at {point:?} lies outside the valid volume region")]
    OutOfBounds { index: usize, point: [f64; 3] },

    #[error("degenerate normal at {0:?}: zero SDT gradient")]
    DegenerateNormal([f64; 3]),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (singular systems, non-convergence)
    /// rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::Numerical(_) | Error::DegenerateNormal(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
