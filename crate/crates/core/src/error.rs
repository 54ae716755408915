use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SrmError>;

/// A line-numbered diagnostic from the feature-spec parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SrmError {
    #[error("feature spec parse error at {0}")]
    Parse(ParseDiagnostic),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("optimization diverged ({0}); try a smaller step size")]
    Divergence(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("session error: {0}")]
    Session(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SrmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SrmError::Io {
            path: path.into(),
            source,
        }
    }
}
