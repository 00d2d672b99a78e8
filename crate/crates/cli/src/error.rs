use std::path::Path;

use reid_core::data::DataError;
use reid_core::eval::EvalError;
use reid_core::model::ModelError;
use reid_core::optim::OptimError;
use reid_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr:e}): {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::NonFiniteLoss { .. } => "non_finite_loss",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Optim(_) => "optim",
            CliError::Eval(_) => "eval",
            CliError::Tensor(_) => "tensor",
        }
    }

    /// One-line JSON error record.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
