use std::path::PathBuf;

use cloudvol_core::CoreError;
use cloudvol_models::ModelError;
use cloudvol_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid training config: {0}")]
    Config(String),

    #[error("no samples in {0}")]
    EmptySplit(String),

    #[error("non-finite loss at step {step} (epoch {epoch}) on batch [{}]", .batch.join(", "))]
    NonFinite {
        step: u64,
        epoch: usize,
        batch: Vec<String>,
    },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("config hash mismatch: checkpoint has {found}, model needs {expected}")]
    ConfigHash { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> TrainError {
    let path = path.into();
    move |source| TrainError::Io { path, source }
}

pub(crate) fn ckpt_err<T>(path: impl Into<PathBuf>, detail: impl Into<String>) -> Result<T> {
    Err(TrainError::Checkpoint {
        path: path.into(),
        detail: detail.into(),
    })
}
