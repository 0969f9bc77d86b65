//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate channel: zero Frobenius norm")]
    DegenerateChannel,

    #[error("shape mismatch at layer {layer} ({name}): expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: usize,
        name: String,
        expected: String,
        actual: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad file format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checkpoint does not match expected model spec: {0}")]
    CheckpointMismatch(String),

    #[error("checkpoint provenance is {found:?}, refusing deployment (UL-only training required)")]
    Provenance { found: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("zero true channel in metric denominator")]
    ZeroReference,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
