//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),
    /// Input data (files, records, corpora) failed validation.
    #[error("data error: {0}")]
    Data(String),
    /// A numeric invariant broke (NaN/Inf in a tensor, diverging loss).
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
