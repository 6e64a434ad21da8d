use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv {path}, row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("invalid json in {context}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error("stale tape: {0}")]
    StaleTape(String),
    #[error("provenance violation: {0}")]
    Provenance(String),
    #[error("stage `{stage}` failed")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
