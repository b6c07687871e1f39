use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },
    #[error("singular {0}")]
    Singular(&'static str),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
