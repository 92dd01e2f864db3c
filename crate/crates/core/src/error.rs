use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing guidance entry: expected file {filename} in {}", dir.display())]
    MissingEntry { dir: PathBuf, filename: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("non-finite gradient at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("provider failed at step {step}: {source}")]
    Provider {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
