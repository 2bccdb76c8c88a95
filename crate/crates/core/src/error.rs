use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token {token} out of range for base vocabulary of size {base}")]
    TokenOutOfRange { token: u64, base: u64 },

    #[error("window has {got} tokens but hash order is {expected}")]
    WindowLength { expected: usize, got: usize },

    #[error("bucket {bucket} out of range for table with {rows} rows")]
    BucketOutOfRange { bucket: u64, rows: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("stale snapshot handle")]
    StaleSnapshot,

    #[error("snapshot handle belongs to a different cache state")]
    ForeignSnapshot,

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
