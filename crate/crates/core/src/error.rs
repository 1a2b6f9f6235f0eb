use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Model or run configuration violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is invalid (bad token id, empty frame list, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A manifest or annotation file failed schema validation.
    #[error("schema error in {path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite loss; carries the step diagnostic.
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
