use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row} in {path}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid synthetic spec: {0}")]
    SyntheticSpec(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("non-finite value in layer `{layer}` ({op})")]
    NonFinite { layer: String, op: &'static str },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("trim error: {0}")]
    Trim(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
