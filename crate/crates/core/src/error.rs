//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// A computation produced or received non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A file failed to parse as its declared binary or text format.
    #[error("format error: {0}")]
    Format(String),

    /// An invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged or otherwise failed mid-run.
    #[error("training error: {0}")]
    Train(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
