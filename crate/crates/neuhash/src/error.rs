//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("filtering removed every rating (min_user={min_user}, min_item={min_item})")]
    EmptyAfterFilter { min_user: usize, min_item: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("non-finite loss at batch example {example}")]
    Numeric { example: usize },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: String, message: String },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
