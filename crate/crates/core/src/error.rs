use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up. The message carries the
    /// offending shapes so the failing layer can be identified.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter is out of its documented range.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Codec { path: PathBuf, message: String },

    /// Manifest row failed validation; `row` is 1-based and counts the header.
    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
