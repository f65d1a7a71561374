use std::path::PathBuf;

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

    #[error("invalid coordinate: {0}")]
    Coordinate(String),

    #[error("duplicate entity id `{0}`")]
    DuplicateId(String),

    #[error("undefined bearing: points coincide")]
    UndefinedBearing,

    #[error("degenerate labels: ranker training needs both positive and negative examples")]
    DegenerateLabels,

    #[error("predicate `{0}` is outside the fixed predicate vocabulary")]
    UnknownPredicate(String),

    #[error("synonym map cycle through `{0}`")]
    SynonymCycle(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("captions and corpus disagree; missing ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::DegenerateLabels)
    }
}
