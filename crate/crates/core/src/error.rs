use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("insufficient points: need more than {k} points, got {n}")]
    InsufficientPoints { n: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no valid proposal among {0} candidates")]
    NoValidProposal(usize),
    #[error("training infeasible: {0}")]
    TrainingInfeasible(String),
    #[error("F1 undefined: {0}")]
    UndefinedF1(String),
    #[error("failed to load {path}: field `{field}`: {reason}")]
    Load {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, field: impl Into<String>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
