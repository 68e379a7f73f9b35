use std::path::PathBuf;

use thiserror::Error;

/// One rejected configuration field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    ConfigInvalid(Vec<FieldError>),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unknown plot kind {0:?}")]
    UnknownKind(String),
    #[error("malformed results file {path}: {message}")]
    MalformedResults { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] slowmix_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self::ConfigInvalid(vec![FieldError { field: field.into(), message: message.into() }])
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;
