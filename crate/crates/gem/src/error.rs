//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GemError {
    /// Invalid configuration supplied by the caller (bad flag value,
    /// inconsistent dimensions, malformed config file).
    #[error("configuration error: {0}")]
    Config(String),

    /// A loss or gradient became non-finite; training must abort.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Checkpoint or dataset file does not start with the expected magic.
    #[error("bad file format: {0}")]
    BadFormat(String),

    /// File carries a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// File ended before the declared payload was read.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Stored tensor shape disagrees with the spec-derived layout.
    #[error("shape mismatch in segment '{segment}': stored {stored:?}, expected {expected:?}")]
    ShapeMismatch {
        segment: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    /// Attempted to update a frozen model.
    #[error("model is frozen: {0}")]
    Frozen(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GemError>;
