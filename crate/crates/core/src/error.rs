use std::path::PathBuf;

/// Errors produced by the guidance pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch at {site}: expected {expected:?}, got {got:?}")]
    Shape {
        site: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("empty constraint set")]
    EmptyConstraints,

    #[error("degenerate feature: zero-norm source vector")]
    DegenerateFeature,

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(site: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            site: site.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
