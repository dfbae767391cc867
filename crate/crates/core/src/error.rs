use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("numeric instability: non-finite gradient for parameter `{param}`")]
    NumericInstability { param: String },

    #[error("parse error in {path} at row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("missing feature for drug {0}")]
    MissingDrugFeature(String),

    #[error("unknown tumor type {0}")]
    UnknownTumorType(String),

    #[error("unknown domain {0}")]
    UnknownDomain(String),

    #[error("model is not fitted: {0}")]
    Unfitted(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NumericInstability { .. } => "numeric",
            Error::Parse { .. } => "parse",
            Error::Ingest(_) => "ingest",
            Error::InvalidInput(_) => "invalid-input",
            Error::MissingDrugFeature(_) => "missing-drug",
            Error::UnknownTumorType(_) => "unknown-tumor-type",
            Error::UnknownDomain(_) => "unknown-domain",
            Error::Unfitted(_) => "unfitted",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
