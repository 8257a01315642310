use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} at ({row}, {col}) outside range [{lo}, {hi}]")]
    OutOfRange {
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(
        "sample {id}: value {value} at ({row}, {col}) outside normalization range [{lo}, {hi}]"
    )]
    SampleOutOfRange {
        id: u64,
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("sample {id}: {reason}")]
    Validation { id: u64, reason: String },

    #[error("dataset format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
