use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DtsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DtsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Operation called in the wrong order, e.g. `backward` without a cached forward pass.
    #[error("invalid state: {0}")]
    State(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> DtsError {
    DtsError::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> DtsError {
    DtsError::Shape(msg.into())
}
