use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("required input not found: {0}")]
    MissingInput(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("meta-path error: {0}")]
    MetaPath(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown group id(s): {}", .0.join(", "))]
    UnknownGroups(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage/configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Train(_) | Error::Eval(_) | Error::Format(_) => 1,
            Error::Parse { .. }
            | Error::MissingInput(_)
            | Error::Config(_)
            | Error::Stage(_)
            | Error::MetaPath(_)
            | Error::Shape(_)
            | Error::UnknownGroups(_) => 2,
        }
    }
}
