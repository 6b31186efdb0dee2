use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or precondition on user-supplied settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input record could not be decoded or is malformed.
    #[error("input error in record `{id}`: {reason}")]
    Input { id: String, reason: String },

    /// Shape or dimension contract violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// A non-finite value showed up where finite values are required.
    #[error("numeric error at `{location}`: {reason}")]
    Numeric { location: String, reason: String },

    /// A metric is undefined for the given batch (e.g. single-class AUROC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("stage mismatch: expected {expected}, found {found}")]
    StageMismatch { expected: String, found: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::StageMismatch { .. } | Error::Contract(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::Numeric { .. } => 4,
            _ => 1,
        }
    }
}
