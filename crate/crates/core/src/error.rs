use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the minimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular 2x2 block (det = {det:e})")]
    SingularBlock { det: f64 },

    #[error("rank-deficient basis: {0}")]
    RankDeficientBasis(String),

    #[error("indefinite system: Cholesky failed after damping escalation to {damping:e}")]
    IndefiniteSystem { damping: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("inconsistent dense instance (residual {residual:e})")]
    InconsistentInstance { residual: f64 },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver failed at level {level}, iteration {iteration}: {source}")]
    Solver {
        level: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
