use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss or gradient term became NaN/Inf.
    #[error("non-finite loss at batch pair {pair}")]
    NonFiniteLoss { pair: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("index build error: duplicate item id `{0}`")]
    DuplicateId(String),

    #[error("index build error: {0}")]
    Build(String),

    #[error("query error: embedding dim {got} does not match index dim {expected}")]
    DimMismatch { expected: usize, got: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("sanitization error from provider `{provider}`: {message}")]
    Sanitize { provider: String, message: String },

    #[error("record error: missing field `{0}`")]
    MissingField(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("fixture miss: no scripted response for prompt hash {0}")]
    FixtureMiss(String),

    #[error("parse error: no QUESTION/ANSWER pairs found in output: {raw:?}")]
    QaParse { raw: String },

    #[error("evaluation error: unknown doc id `{0}`")]
    UnknownDoc(String),

    #[error("judge error: none of {0} samples carried a parseable 1-5 score")]
    Judge(usize),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Transient errors are worth retrying against a remote backend.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
