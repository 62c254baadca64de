use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed model file: {section} at byte {offset}: {message}")]
    Format {
        section: &'static str,
        offset: u64,
        message: String,
    },

    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: u64 },

    #[error("codebook row allocation failed: {0}")]
    Allocation(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
