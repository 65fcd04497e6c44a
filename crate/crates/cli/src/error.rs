use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: malformed file: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Core(jointrecon::Error),
}

impl From<jointrecon::Error> for CliError {
    fn from(e: jointrecon::Error) -> Self {
        match e {
            jointrecon::Error::ConfigError { field, reason } => CliError::Config { field, reason },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
