use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index:?} out of bounds for dims {dims:?}")]
    OutOfBounds { index: [usize; 3], dims: [usize; 3] },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code for this error: 2 config/usage, 3 I/O, 4 degenerate result.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutOfBounds { .. }
            | Error::Geometry(_)
            | Error::Config(_)
            | Error::Domain(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Degenerate(_) => 4,
        }
    }
}
