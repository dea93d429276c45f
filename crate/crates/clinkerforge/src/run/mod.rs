//! Orchestration: configuration, manifests, the staged pipeline, and
//! report emission.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("[{stage}] {msg}")]
    Stage { stage: &'static str, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl RunError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> RunError {
        RunError::Stage { stage, msg: err.to_string() }
    }

    /// Process exit code: 2 for usage and input problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => 2,
            RunError::Stage { msg, .. } => {
                // Input problems surface as missing files or parse errors.
                if msg.contains("No such file") || msg.contains("not found") || msg.contains("os error 2")
                {
                    2
                } else {
                    1
                }
            }
        }
    }
}
