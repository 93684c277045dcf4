use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("cannot parse term list `{input}`: {reason}")]
    TermSyntax { input: String, reason: String },
    #[error("design matrix for {0} is rank deficient ({1} columns, rank {2})")]
    RankDeficient(String, usize, usize),
    #[error("{0}")]
    Schema(String),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
