//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by node `{node}`")]
    NonFinite { node: String },

    #[error("no tensor bound for `{0}`")]
    Unbound(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty token")]
    EmptyToken,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("rate {0} outside [0, 1]")]
    RateOutOfRange(f64),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    #[error("tag schemas differ: model has {model:?}, data has {data:?}")]
    SchemaMismatch {
        model: Vec<String>,
        data: Vec<String>,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code for the CLI: 2 for usage/IO problems, 1 for
    /// internal or numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::UnknownTag(_)
            | Error::SchemaMismatch { .. }
            | Error::EmptyCorpus
            | Error::Invalid(_) => 2,
            _ => 1,
        }
    }
}
