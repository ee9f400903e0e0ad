use std::path::PathBuf;

use sidelink_core::agent::AgentError;
use sidelink_core::env::EnvError;
use sidelink_core::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error in {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint error in {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("agent error: {0}")]
    Agent(#[from] AgentError),
    #[error("network error: {0}")]
    Nn(#[from] NnError),
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Csv { path, source }
    }

    /// Short category name, also used to pick the process exit code.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) | HarnessError::ConfigParse { .. } => "config",
            HarnessError::Io { .. } | HarnessError::Csv { .. } => "io",
            HarnessError::Checkpoint { .. } => "checkpoint",
            HarnessError::Env(_) | HarnessError::Agent(_) | HarnessError::Nn(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "checkpoint" => 4,
            _ => 5,
        }
    }
}
