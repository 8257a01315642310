use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer {index} ({kind}): {reason}")]
    Shape {
        index: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("backward called without a cached forward pass")]
    NoForwardCache,

    #[error("incompatible networks at layer {index}: {reason}")]
    Incompatible { index: usize, reason: String },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unsupported model format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] qubo_core::CoreError),
}

impl NnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NnError::InvalidArgument(msg.into())
    }
}
