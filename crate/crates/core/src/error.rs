use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constraint violated: {message} (genes: {})", genes.join(", "))]
    Constraint { message: String, genes: Vec<String> },

    #[error("simulation did not converge after {steps} steps; slowest genes: {}", genes.join(", "))]
    Simulation { steps: usize, genes: Vec<String> },

    #[error("training failed: {0}")]
    Training(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

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
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
