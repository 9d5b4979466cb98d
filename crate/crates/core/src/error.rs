use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DparError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DparError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("privacy budget infeasible: {0}")]
    Budget(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl DparError {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        DparError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DparError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front-end. Each error
    /// family maps to its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            DparError::Config(_) => 2,
            DparError::StageOrder(_) => 3,
            DparError::Budget(_) | DparError::Calibration(_) => 4,
            DparError::Parse { .. } | DparError::Dimension(_) | DparError::Json { .. } => 5,
            DparError::Io { .. } => 6,
            DparError::Numeric(_) => 7,
        }
    }
}
