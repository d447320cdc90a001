use std::path::PathBuf;

use thiserror::Error;

/// Anything that stops a command after its arguments parsed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mgs_core::Error),

    #[error("{what} not found: {}", path.display())]
    Missing { what: String, path: PathBuf },

    /// A required input was given neither as a flag nor in the config.
    #[error("no {what} given (use {flag} or the config file)")]
    Unspecified { what: String, flag: String },

    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn missing(what: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        CliError::Missing {
            what: what.into(),
            path: path.into(),
        }
    }

    pub fn unspecified(what: impl Into<String>, flag: impl Into<String>) -> Self {
        CliError::Unspecified {
            what: what.into(),
            flag: flag.into(),
        }
    }

    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
