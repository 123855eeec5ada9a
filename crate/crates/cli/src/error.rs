use std::path::PathBuf;

use thiserror::Error;
use vmin_core::dataset::DatasetError;
use vmin_core::{Error as CoreError, ErrorClass};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema mismatch: input lacks column `{0}` that the model was trained on")]
    SchemaMismatch(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Json { .. } | CliError::SchemaMismatch(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => class_code(e.class()),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }
}

pub fn class_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

/// Lifts a core error, turning a missing input column into a schema mismatch.
pub fn lift(e: impl Into<CoreError>) -> CliError {
    match e.into() {
        CoreError::Dataset(DatasetError::MissingColumn(name)) => CliError::SchemaMismatch(name),
        other => CliError::Core(other),
    }
}
