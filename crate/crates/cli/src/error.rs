use std::path::Path;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{file}: {inner}")]
    InFile { file: String, inner: Box<CliError> },

    #[error("bad override: {0}")]
    Override(String),

    #[error("no checkpoint at {0}; run `train` first or pass --checkpoint")]
    MissingCheckpoint(String),

    #[error("cannot compare runs: {0}")]
    Compare(String),

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] dtn_core::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn in_file(self, file: &Path) -> Self {
        CliError::InFile {
            file: file.display().to_string(),
            inner: Box::new(self),
        }
    }

    /// Config problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Syntax { .. } | CliError::Config { .. } | CliError::Override(_) | CliError::Usage(_) => 2,
            CliError::InFile { inner, .. } => inner.exit_code(),
            _ => 1,
        }
    }
}
