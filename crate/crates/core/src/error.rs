use std::io;
use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    Validation(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data or parameters, as opposed to
    /// failures while running a stage.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidTree(_)
            | Error::Degenerate(_)
            | Error::Config(_)
            | Error::Io { .. } => true,
            Error::Precondition(_) | Error::Provider(_) => false,
            Error::Iteration { source, .. } => source.is_input_error(),
        }
    }
}
