use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("inversion error: {0}")]
    Inversion(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("rollout error at step {step}: {message}")]
    Rollout { step: usize, message: String },
    #[error("parse error in record `{record}`: {message}")]
    Parse { record: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            record: record.into(),
            message: message.into(),
        }
    }
}
