use std::path::PathBuf;

/// Errors raised across the testbed.
///
/// The variants are coarse on purpose: the command-line front end maps
/// [`Error::is_validation`] errors to exit code 1 and everything else to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::Validation(_) | Error::Capacity(_) | Error::Parse { .. } | Error::Load(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
