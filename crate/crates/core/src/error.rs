use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {message}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
