use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the matting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("frame {index} missing: {path}")]
    MissingFrame { index: usize, path: PathBuf },

    #[error("no frames match pattern {0}")]
    EmptySequence(String),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("failed to encode {path}: {message}")]
    Encode { path: PathBuf, message: String },

    /// Shapes, channel counts or rates that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("calibration error: {message} (condition number {condition:.3e})")]
    Calibration { message: String, condition: f64 },

    /// A background level that cannot be divided by.
    #[error("invalid background level: {0}")]
    BackgroundLevel(String),

    /// Too many pixels whose clean-plate matte channel is not positive.
    #[error("{affected} of {total} pixels have a non-positive clean-plate matte channel")]
    DegeneratePlate { affected: usize, total: usize },

    /// An operation was applied to data in the wrong state.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("scene description: {0}")]
    Scene(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }
}
