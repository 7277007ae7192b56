use std::io::ErrorKind;

use cloudvol_core::CoreError;
use cloudvol_models::ModelError;
use cloudvol_tensor::TensorError;
use cloudvol_train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Failed(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Missing(_) => 3,
            Self::Numeric(_) => 4,
            Self::Failed(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Io { source, .. } if source.kind() == ErrorKind::NotFound => Self::Missing(e.to_string()),
            CoreError::Invalid(_) => Self::Config(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => Self::Config(e.to_string()),
            ModelError::Tensor(t) => t.into(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Core(c) => c.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Io { ref source, .. } if source.kind() == ErrorKind::NotFound => Self::Missing(e.to_string()),
            TrainError::Config(_) | TrainError::ConfigHash { .. } => Self::Config(e.to_string()),
            TrainError::EmptySplit(_) | TrainError::Checkpoint { .. } => Self::Missing(e.to_string()),
            TrainError::NonFinite { .. } => Self::Numeric(e.to_string()),
            _ => Self::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Failed(e.to_string())
    }
}

/// Context for IO on a named path.
pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        if e.kind() == ErrorKind::NotFound {
            CliError::Missing(format!("{}: {e}", path.display()))
        } else {
            CliError::Failed(format!("{}: {e}", path.display()))
        }
    }
}
