use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate belief: product of prior and likelihood is zero everywhere")]
    DegenerateBelief,

    #[error("invalid probability vector: {0}")]
    InvalidPdv(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at update {update}: loss = {loss}")]
    Divergence { update: u64, loss: f64 },

    #[error("missing artifact `{name}`: {}", path.display())]
    MissingArtifact { name: String, path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
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

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad user input (configuration, files, flags)
    /// rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::MissingArtifact { .. }
        )
    }
}
