//! Crate-wide error and result types.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced by any part of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An underlying I/O operation failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A file exists but its contents do not match the expected format.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// An argument violates a precondition (empty input, out-of-range
    /// probability, non-finite value, too few samples, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input is technically well formed but carries no usable signal
    /// (constant series, all voxels dropped, zero null variance, ...).
    /// Kept distinct from `InvalidInput` so callers can degrade gracefully.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Two objects that must describe the same voxel grid do not.
    #[error("geometry mismatch: {0}")]
    Geometry(String),

    /// A configuration value (CLI flag, simulation spec field) is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
