use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("function is not evaluable in complex arithmetic: {0}")]
    Unsupported(String),

    /// The misfit is already zero so the multiplier derivative is undefined;
    /// callers should stop, the constraint is met.
    #[error("zero data residual: constraint already satisfied")]
    ZeroResidual,

    /// A solver finished without meeting its stopping criteria. Outputs
    /// were still written.
    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 2 for invalid input, 3 for solver failure, 1
    /// for a failed `compare` check.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::Argument(_)
            | Error::Config { .. }
            | Error::Parse { .. }
            | Error::Io { .. } => 2,
            Error::NotPositiveDefinite { .. }
            | Error::Numerical(_)
            | Error::Unsupported(_)
            | Error::ZeroResidual
            | Error::SolverFailed(_) => 3,
            Error::Check(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
