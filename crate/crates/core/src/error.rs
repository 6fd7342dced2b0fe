use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },

    #[error("line {line}: feature dimension {got} does not match dimension {expected} established earlier")]
    InconsistentDimension { line: usize, expected: usize, got: usize },

    #[error("chosen index {chosen} out of range for a choice set of {size} items")]
    ChosenOutOfRange { chosen: usize, size: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (dimension {dim})")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("optimization diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("every grid cell diverged:\n{table}")]
    AllRunsDiverged { table: String },

    #[error("node {0} is not present in the graph state")]
    UnknownNode(String),

    #[error("no bin has at least {min_count} observations")]
    NoUsableBins { min_count: usize },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
