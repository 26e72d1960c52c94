//! CLI-level errors. Every variant renders as a single line so wrappers can
//! parse `error[kind]: detail` from stderr.

use std::path::PathBuf;

use bbnet_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("image '{0}' has no mask with the same stem")]
    Pairing(PathBuf),
    #[error("{0}")]
    Dataset(String),
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("{0}")]
    Checkpoint(String),
    #[error("no prediction for: {0}")]
    MissingPredictions(String),
    #[error("{0}")]
    Core(#[from] CoreError),
}

impl AppError {
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Io { .. } => "io",
            AppError::Config(_) => "config",
            AppError::Pairing(_) => "pairing",
            AppError::Dataset(_) => "dataset",
            AppError::Image { .. } => "image",
            AppError::Checkpoint(_) => "checkpoint",
            AppError::MissingPredictions(_) => "missing-predictions",
            AppError::Core(_) => "core",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
