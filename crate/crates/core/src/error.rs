//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad range, mismatched lengths, unknown key).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dataset ingestion failed (missing file, malformed row, undersized image).
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Tensor shape does not match what a network expects.
    #[error("shape error: {0}")]
    Shape(String),

    /// A vector that must have nonzero norm is (numerically) zero.
    #[error("degenerate-vector error: {0}")]
    DegenerateVector(String),

    /// Checkpoints cannot be composed (architecture fingerprints differ).
    #[error("composition error: {0}")]
    Composition(String),

    /// Evaluation was asked to run on unusable data (e.g. unlabeled manifest).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Malformed or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted; a diagnostic checkpoint is written when possible.
    #[error("training aborted: {reason} (diagnostic checkpoint: {checkpoint:?})")]
    TrainingAborted {
        reason: String,
        checkpoint: Option<PathBuf>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
