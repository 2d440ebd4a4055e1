use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Model or numerical failure inside a run.
    pub const RUN: i32 = 1;
    /// Bad command line (also what clap uses).
    pub const USAGE: i32 = 2;
    pub const SCHEMA: i32 = 3;
    pub const IO: i32 = 4;
    pub const MALFORMED: i32 = 5;
    /// A check the command performs did not pass.
    pub const ACCEPTANCE: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config {path}: {reason}")]
    Schema { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },

    #[error(transparent)]
    Model(#[from] qfm_casr::Error),

    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Schema { .. } => exit::SCHEMA,
            CliError::Io { .. } => exit::IO,
            CliError::Malformed { .. } => exit::MALFORMED,
            CliError::Model(_) => exit::RUN,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
        }
    }

    pub(crate) fn schema(path: &str, reason: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        CliError::Malformed {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
