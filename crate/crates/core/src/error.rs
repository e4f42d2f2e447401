use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(
        "training diverged at iteration {iteration}: non-finite loss (learning rate too high?)"
    )]
    Diverged { iteration: usize },

    #[error("threshold eliminates all weights (layer {layer}, neuron {neuron})")]
    EmptySelection { layer: usize, neuron: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{}:{line}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Degenerate(_) => "degenerate-input",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::Unsupported(_) => "unsupported",
            Error::Diverged { .. } => "diverged-training",
            Error::EmptySelection { .. } => "empty-selection",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Load { .. } => "load",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
