use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    /// `row` is the 1-based data row (the header is not counted).
    #[error("bad cell at row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("label column '{0}' not found in header")]
    MissingLabelColumn(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid action {action}: {reason}")]
    InvalidAction { action: usize, reason: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid category map: {0}")]
    InvalidCategories(String),

    #[error("architecture mismatch")]
    ArchMismatch,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("insufficient data: {0}")]
    Insufficient(String),
}

impl Error {
    /// Short stable tag used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Cell { .. } => "cell",
            Error::MissingLabelColumn(_) => "missing_label_column",
            Error::EmptyDataset => "empty_dataset",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidAction { .. } => "invalid_action",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidCategories(_) => "invalid_categories",
            Error::ArchMismatch => "arch_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
            Error::Insufficient(_) => "insufficient_data",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
