use std::path::PathBuf;

/// Errors raised anywhere in the restoration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range (length {len})")]
    Index { index: usize, len: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("solver diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }

    /// Process exit status used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
