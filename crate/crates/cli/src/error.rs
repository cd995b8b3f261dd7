//! Error type and process exit codes.

use std::path::Path;
use thiserror::Error;

/// Exit code for invalid command-line usage (matches clap).
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// A file exists but does not parse.
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn format(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Format(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Format(_) => EXIT_IO,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}
