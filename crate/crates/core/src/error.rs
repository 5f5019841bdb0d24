use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no-crossing trial: trial {trial_id} never entered the road")]
    NoCrossing { trial_id: u32 },

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite loss {loss} at epoch {epoch} ({model})")]
    NonFiniteLoss {
        model: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("schema error in {path}: row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure was caused by bad user input rather than a runtime fault.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::InvalidParameter(_)
            | Error::Config { .. }
            | Error::Schema { .. }
            | Error::DimensionMismatch { .. }
            | Error::InsufficientData(_) => true,
            Error::Fold { source, .. } => source.is_invalid_input(),
            _ => false,
        }
    }
}
