//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("degenerate mass: {0}")]
    DegenerateMass(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated or oversized file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },

    #[error("state error: {0}")]
    State(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
