use std::path::PathBuf;

/// Errors produced anywhere in the analytics pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid geography: {0}")]
    Geography(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed event for patient {patient_id} on day {fill_date}: {reason}")]
    MalformedEvent {
        patient_id: String,
        fill_date: i32,
        reason: String,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("registry version mismatch: expected {expected}, found {found}")]
    RegistryMismatch { expected: String, found: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("explanation error: {0}")]
    Explain(String),

    #[error("aggregation error: {0}")]
    Aggregate(String),

    #[error("unknown region {0}")]
    UnknownRegion(String),

    #[error("mixed levels in selection: {0}")]
    MixedLevels(String),

    #[error("invalid store: {0}")]
    Store(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
}
