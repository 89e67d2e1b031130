use cogdrive_core::evalkit::EvalError;
use cogdrive_core::neuro::NeuroError;
use cogdrive_core::simworld::ScenarioError;
use serde_json::json;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Usage(String),
    #[error("service: {0}")]
    Serve(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Scenario(_) => "config_invalid",
            HarnessError::Neuro(NeuroError::EmptyDataset) => "empty_dataset",
            HarnessError::Neuro(NeuroError::DivergenceDetected { .. }) => "divergence",
            HarnessError::Neuro(_) => "neuro",
            HarnessError::Eval(_) => "eval",
            HarnessError::Usage(_) => "usage",
            HarnessError::Serve(_) => "serve",
            HarnessError::CheckFailed(_) => "check_failed",
        }
    }

    /// Machine-readable error record printed by the CLI.
    pub fn record(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
