use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid codebook: {0}")]
    Codebook(String),

    #[error("column {column:?} is not a codebook item")]
    UnknownColumn { column: String },

    #[error("codebook item {item:?} has no column in the data file")]
    MissingColumn { item: String },

    #[error("row {row}, column {column:?}: value {value:?} is neither an answer option nor a missing code")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("training filter {filter:?} leaves no training respondents")]
    EmptyTraining { filter: String },

    #[error("example {index} has no assistant turn")]
    MissingAssistant { index: usize },

    #[error("endpoint returned no logprobs; request logprobs/top_logprobs support from the backend")]
    NoLogprobs,

    #[error("fine-tuning job {job_id} failed: {message}")]
    JobFailed { job_id: String, message: String },

    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the user's configuration or input files rather than
    /// by a failing step.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Codebook(_)
                | Error::UnknownColumn { .. }
                | Error::MissingColumn { .. }
                | Error::InvalidValue { .. }
                | Error::UnknownItem(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<reqwest::Error> for Error {
    fn from(e: reqwest::Error) -> Self {
        Error::Backend(e.to_string())
    }
}
