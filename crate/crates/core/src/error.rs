use std::fmt;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn param(msg: impl fmt::Display) -> Self {
        Error::Parameter(msg.to_string())
    }

    pub(crate) fn format(offset: usize, detail: impl fmt::Display) -> Self {
        Error::Format {
            offset: offset as u64,
            detail: detail.to_string(),
        }
    }
}
