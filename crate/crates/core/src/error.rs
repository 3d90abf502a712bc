use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("transducer rejected input: no transition from state {state} on {symbol}")]
    Rejected { state: String, symbol: String },
    #[error("transducer did not halt within {0} steps")]
    NonHalting(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
