use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty track")]
    EmptyTrack,

    #[error("invalid light: {0}")]
    InvalidLight(String),

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid lighting script: {}", .0.join("; "))]
    InvalidScript(Vec<String>),

    #[error("plane depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("plane depths must be strictly increasing")]
    NonIncreasingDepths,

    #[error("frame count {0} is not of the form 4N+1")]
    FrameCount(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported plane count {0} (expected 1 or 4)")]
    PlaneCount(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss {
        loss: f64,
        step: u64,
        detail: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("manifest violation: {0}")]
    Manifest(String),

    #[error("malformed tensor file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
