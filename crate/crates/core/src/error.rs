use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least {needed} positions, got {got}")]
    TooFewPositions { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} is not a known class")]
    UnknownLabel { label: u32 },

    #[error("image side {got} does not match model side {expected}")]
    SideMismatch { expected: usize, got: usize },

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint is corrupt: {0}")]
    Checksum(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("infeasible environment: {0}")]
    Infeasible(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::EmptyDataset => "empty_dataset",
            Error::TooFewPositions { .. } => "too_few_positions",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::SideMismatch { .. } => "side_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Version { .. } => "version",
            Error::Checksum(_) => "checksum",
            Error::Checkpoint(_) => "checkpoint",
            Error::Infeasible(_) => "infeasible",
            Error::Json(_) => "json",
        }
    }
}
