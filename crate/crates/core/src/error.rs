use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("tensor header mismatch in {path}: {detail}")]
    HeaderMismatch { path: PathBuf, detail: String },

    #[error("non-finite value in trial {trial}")]
    NonFinite { trial: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid synthetic spec: {0}")]
    SyntheticSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm row {row} in {matrix}")]
    ZeroNorm { matrix: &'static str, row: usize },

    #[error("non-finite logits: {0}")]
    NonFiniteLogits(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("provider `{provider}` failed on image `{image}`: {message}")]
    Provider {
        provider: String,
        image: String,
        message: String,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the CLI error contract.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::HeaderMismatch { .. } => "header_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::InvalidSplit(_) => "invalid_split",
            Error::Protocol(_) => "protocol",
            Error::SyntheticSpec(_) => "synthetic_spec",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::NonFiniteLogits(_) => "non_finite_logits",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Provider { .. } => "provider",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
