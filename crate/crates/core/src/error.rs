use std::io;

use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the CLI exit-code classes: `Input`, `Size`,
/// `Config` and `Io` are caller errors (exit 2); `CheckFailed` is a failed
/// verification (exit 1); the numeric and internal variants indicate a
/// problem inside a computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("numeric-domain error: {0}")]
    NumericDomain(String),

    #[error("numeric error: {0}")]
    NonFinite(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by the caller's input rather than by a
    /// failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::Size(_) | Error::Config { .. } | Error::Io { .. }
        )
    }
}
