//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RaeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl RaeError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            RaeError::Config(_) | RaeError::InvalidArgument(_) => 1,
            RaeError::Io { .. } | RaeError::Format(_) | RaeError::Serialization(_) => 2,
            RaeError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RaeError>;
