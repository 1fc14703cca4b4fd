use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] pflow_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

pub type ToolResult<T> = std::result::Result<T, ToolError>;

impl ToolError {
    pub fn io(path: impl AsRef<Path>, err: impl std::fmt::Display) -> Self {
        ToolError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }

    /// 1 for failed verification, 2 for usage, IO and data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Verification(_) => 1,
            _ => 2,
        }
    }
}
