use std::path::PathBuf;

/// Errors from file formats, configuration and the benchmark harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tailflow_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },
    #[error("{path}: line {line} has {got} fields, expected {expected}")]
    Ragged { path: PathBuf, line: u64, expected: usize, got: usize },
    #[error("{path}: row {row}, column {column}: `{value}` is not a finite number")]
    BadCell { path: PathBuf, row: usize, column: usize, value: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config {key}: {reason}")]
    Config { key: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }
}
