use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("out of bounds: {0}")]
    Bounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("input too small: {0}")]
    Size(String),

    #[error("malformed DICOM: {0}")]
    Format(String),
    #[error("unsupported transfer syntax {0}")]
    UnsupportedSyntax(String),
    #[error("pixel data length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid rescale slope {0}")]
    InvalidRescale(f64),

    #[error("stale cache: {0}")]
    State(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at iteration {iteration} (batch {batch:?}, max |activation| {max_activation:e})")]
    NonFiniteLoss {
        iteration: u64,
        batch: Vec<usize>,
        max_activation: f64,
    },
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file {path}: {reason}")]
    FileFormat { path: PathBuf, reason: String },
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

    pub(crate) fn file_format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::FileFormat {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
