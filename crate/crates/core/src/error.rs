use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A variable handle does not belong to the tape it was used with.
    #[error("missing tape: {0}")]
    MissingTape(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("unknown tap `{requested}` (available: {})", available.join(", "))]
    UnknownTap { requested: String, available: Vec<String> },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image decode error in {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("checkpoint error at byte {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid-shape",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::UnsupportedKernel(_) => "unsupported-kernel",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::MissingTape(_) => "missing-tape",
            Error::MissingGradient(_) => "missing-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::UnknownTap { .. } => "unknown-tap",
            Error::Dataset(_) => "dataset",
            Error::Decode { .. } => "decode",
            Error::Checkpoint { .. } => "checkpoint",
            Error::CheckpointVersion { .. } => "checkpoint-version",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
