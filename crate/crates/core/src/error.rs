use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("cannot parse {value:?} as a number at line {line}, column {column}")]
    Parse { line: u64, column: String, value: String },

    #[error("target column {0} not found")]
    MissingTarget(String),

    #[error("dataset has no data rows")]
    EmptyDataset,

    #[error("dataset has no feature columns")]
    NoFeatures,

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    /// True for failures caused by the input data rather than by the
    /// requested configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Parse { .. }
                | Error::MissingTarget(_)
                | Error::EmptyDataset
                | Error::NoFeatures
                | Error::NonFinite { .. }
                | Error::InsufficientSamples(_)
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
