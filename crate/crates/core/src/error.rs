use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    Alphabet(String),

    #[error("invalid trace `{trace}`: {reason}")]
    Trace { trace: String, reason: String },

    /// `record` is the 1-based position in the action list.
    #[error("ingestion error at record {record}: {reason}")]
    Ingest { record: usize, reason: String },

    /// A malformed input file; `line` is 1-based.
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("trace `{trace}` has zero likelihood under every mixture component")]
    ZeroLikelihood { trace: String },

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
