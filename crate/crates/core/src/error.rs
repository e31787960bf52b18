use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;
use crate::quality::QualityError;
use crate::trace::TraceError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the failure is numeric (bad fit, non-finite value) rather than
    /// a problem with the input data or configuration.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite(_) => true,
            Error::Nn(NnError::NonFiniteGradient) => true,
            Error::Quality(q) => q.is_numeric(),
            Error::Env(EnvError::Quality(q)) => q.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
