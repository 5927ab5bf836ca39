//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad parameter values, impossible workload requests).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or length mismatch between tensors, layers, or encodings.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite value encountered where a finite number is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Referenced entity (block, partition, encoding) does not exist.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
