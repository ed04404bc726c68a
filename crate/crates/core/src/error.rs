use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    /// Malformed input file. `field` names the offending part of the format.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Input,
    Numeric,
}

impl Error {
    pub fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Io(_) | Error::Format { .. } | Error::Dimension(_) => ErrorKind::Input,
            Error::Contract(_) | Error::NonFinite(_) => ErrorKind::Numeric,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::format("json", e.to_string())
        }
    }
}
