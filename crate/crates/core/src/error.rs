use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions are incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A layer or model configuration cannot be realized.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite input or an arithmetic failure.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller broke an API contract (e.g. backward from a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed tensor file, checkpoint or config file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
