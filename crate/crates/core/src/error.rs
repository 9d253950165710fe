use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input file could not be parsed. Lines are 1-based.
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("`{0}` not found")]
    NotFound(String),

    #[error("AUC is undefined: the labeled set needs at least one positive and one negative instance")]
    AucUndefined,

    #[error("malformed LLM reply: {0}")]
    Reply(String),

    #[error("LLM transport failure: {0}")]
    Transport(String),

    #[error("mitigation failed: {0}")]
    Mitigation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input (files, flags, preconditions) as
    /// opposed to failures while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Invalid(_)
                | Error::UnknownClass(_)
                | Error::NotFound(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
