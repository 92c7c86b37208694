use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::data::pnm::PnmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter for {op}: {detail}")]
    Param { op: &'static str, detail: String },

    #[error("degenerate batch statistics in batch_norm: each channel slice has {count} element(s), at least 2 are required in train mode")]
    DegenerateStats { count: usize },

    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(crate::tensor::Shape),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("input size {h}x{w} is not divisible by {multiple}; resize or pad the image first")]
    InputSize { h: usize, w: usize, multiple: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("missing counterpart files: {}", .0.join(", "))]
    MissingFiles(Vec<String>),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Pnm {
        path: PathBuf,
        #[source]
        source: PnmError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Param { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
