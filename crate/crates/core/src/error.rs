use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("non-finite {term}: {value}")]
    NonFinite { term: &'static str, value: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Broad error classes, used by the command line to choose exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Label,
    Numeric,
    Contract,
    Format,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io { .. } | Error::Image { .. } => ErrorClass::Io,
            Error::Label(_) => ErrorClass::Label,
            Error::NonFinite { .. } => ErrorClass::Numeric,
            Error::Dimension(_) | Error::Contract(_) | Error::Evaluation(_) => ErrorClass::Contract,
            Error::Format(_) | Error::Corrupt(_) => ErrorClass::Format,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
