//! Error type shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible operand shapes; the message carries both shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller violated an operation contract (e.g. non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration; the message names the offending field.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite value produced by a primitive, or a NaN loss abort.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed checkpoint archive.
    #[error("archive error: {0}")]
    Archive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
