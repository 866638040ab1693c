use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum IrisError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("gradient supplied for frozen partition `{0}`")]
    FrozenPartition(String),

    #[error("CTC target of length {target_len} needs at least {required} frames, got {frames}")]
    InfeasibleCtc {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("checkpoint fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported wav file {path}: {field} is {found}, expected {expected}")]
    WavFormat {
        path: PathBuf,
        field: &'static str,
        found: String,
        expected: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, IrisError>;

impl IrisError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        IrisError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IrisError::Io {
            path: path.into(),
            source,
        }
    }
}
