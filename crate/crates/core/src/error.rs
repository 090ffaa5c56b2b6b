//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the flowdistill core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad dimensions, mismatched shapes,
    /// invalid hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed binary file. Reports the byte offset where parsing failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Non-finite values where finite input is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A sample was rejected by preprocessing (e.g. an all-zero response grid).
    #[error("rejected sample: {0}")]
    RejectedSample(String),

    /// A grid statistic is undefined because the grid has zero total content.
    #[error("undefined on zero grid: {0}")]
    ZeroGrid(String),

    /// Training hit a non-finite loss and aborted.
    #[error("non-finite loss during {stage} at epoch {epoch}, batch {batch}")]
    NanAbort {
        stage: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
