use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed line: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("no interactions")]
    NoInteractions,

    #[error("filtering removed every interaction (min_user={min_user}, min_item={min_item})")]
    EmptyAfterFilter { min_user: usize, min_item: usize },

    #[error("index out of range: {what} {index} >= {bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("user {user}: only {eligible} eligible negatives, need {needed}")]
    NotEnoughCandidates {
        user: usize,
        eligible: usize,
        needed: usize,
    },

    #[error("invalid token id {0}")]
    InvalidToken(usize),

    #[error("token {0:?} is not in the vocabulary")]
    MissingToken(String),

    #[error("sequence of {len} tokens exceeds the context limit {limit}")]
    ContextOverflow { len: usize, limit: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {what} = {value}")]
    Diverged {
        step: usize,
        what: &'static str,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
