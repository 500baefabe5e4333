use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the classifier pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("wav format error: {0}")]
    Format(String),

    #[error("unsupported sample rate {found} Hz (expected {expected} Hz, resampling is not supported)")]
    SampleRate { found: u32, expected: u32 },

    #[error("channel error: {0}")]
    Channel(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("cannot stratify split: {0}")]
    Stratification(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("audio too short: {frames} samples, need at least {needed}")]
    TooShort { frames: usize, needed: usize },

    #[error("t-SNE error: {0}")]
    Tsne(String),

    #[error("I/O error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
