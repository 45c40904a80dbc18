//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum ScoutError {
    /// A volume header is missing or malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Payload bytes do not match the header's declared shape.
    #[error("corrupt volume: {0}")]
    Corruption(String),

    /// Data violates an invariant (non-finite samples, bad range, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument is outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A pipeline stage input is missing.
    #[error("dependency error: {0}")]
    Dependency(String),

    /// A pipeline stage input exists but its checksum changed.
    #[error("stale artifact: {0}")]
    Stale(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training failed at iteration {iteration}: {msg}")]
    Training { iteration: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ScoutError>;
