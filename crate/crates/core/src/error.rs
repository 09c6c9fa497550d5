use crate::numeric::NumericError;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("set `{set_id}` has {tokens} tokens, budget is {budget}")]
    TokenBudget {
        set_id: String,
        tokens: usize,
        budget: usize,
    },
    #[error("mismatched entity sets: {0}")]
    MismatchedSets(String),
    #[error("{path}:{line}: {message}")]
    Dataset { path: String, line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Dataset { .. }
                | Error::Invalid(_)
                | Error::MismatchedSets(_)
                | Error::Checkpoint(_)
                | Error::Json(_)
        ) || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
