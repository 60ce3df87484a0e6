use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("character {0:?} is not in the vocabulary")]
    OutOfVocabulary(char),

    #[error("label id {id} out of range for {count} labels")]
    LabelOutOfRange { id: usize, count: usize },

    #[error("label sequence of length {labels} needs at least {required} frames, got {frames}")]
    Unalignable {
        labels: usize,
        required: usize,
        frames: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ARPA parse error in {section} (line {line}): {message}")]
    Arpa {
        section: String,
        line: usize,
        message: String,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
