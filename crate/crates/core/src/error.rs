use std::path::PathBuf;

use thiserror::Error;

use crate::filter::LossTrace;
use crate::theory::TheoryTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Trace recorded up to a numerical abort.
#[derive(Debug, Clone)]
pub enum PartialTrace {
    Loss(LossTrace),
    Theory(TheoryTrace),
}

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Caller-supplied values outside their domain (labels, epochs, empty lists).
    #[error("input error: {0}")]
    Input(String),

    /// API used out of order, e.g. a forward cache reused after an update.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or infinity surfaced during training. `partial` keeps whatever
    /// trace had been recorded before the abort.
    #[error("numerical error: {message}")]
    Numerical {
        message: String,
        partial: Option<Box<PartialTrace>>,
    },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("split error: {0}")]
    Split(String),

    /// Clustering cannot proceed, e.g. every mean loss is identical.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Failure inside a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            message: message.into(),
            partial: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether this error came from a non-finite value during optimization.
    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::Numerical { .. })
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_))
    }
}
