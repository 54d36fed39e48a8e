use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("cannot aggregate: {0}")]
    Aggregation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("truncated input: needed {needed} bytes, found {available}")]
    Truncated { needed: usize, available: usize },

    #[error("unstable iteration: {0}")]
    Unstable(String),

    #[error("singular mixture: {0}")]
    SingularMixture(String),

    #[error("privacy rule violated: {0}")]
    PrivacyRule(String),

    #[error("infeasible shard plan: label {label} needs {needed} samples but only {available} exist")]
    Allocation {
        label: usize,
        needed: usize,
        available: usize,
    },

    #[error("missing distillation target for label {0}")]
    MissingTarget(usize),

    #[error("episode already finished; reset the environment before stepping")]
    EpisodeDone,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation { .. } | Error::InvalidArgument(_))
    }
}
