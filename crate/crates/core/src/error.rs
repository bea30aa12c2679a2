use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("degenerate sample: no task labels present")]
    DegenerateSample,

    #[error("parse error in {path} at row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("completeness error: sample `{id}` is missing a {task} label with no teacher prediction")]
    Completeness { id: String, task: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch ids: {ids:?}")]
    NonFiniteLoss { epoch: usize, ids: Vec<String> },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category tag, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InputShape(_) => "input-shape",
            Error::Validation(_) | Error::DegenerateSample => "validation",
            Error::Internal(_) => "internal",
            Error::Parse { .. } | Error::Csv(_) => "parse",
            Error::Alignment(_) => "alignment",
            Error::Merge(_) => "merge",
            Error::Completeness { .. } => "completeness",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "training",
            Error::Analysis(_) => "analysis",
            Error::Io { .. } | Error::Image { .. } => "io",
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
