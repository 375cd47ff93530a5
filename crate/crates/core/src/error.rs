use thiserror::Error;

/// Errors raised by trace ingestion, validation, and the measure computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("record {record}: {cause}")]
    Json {
        record: usize,
        cause: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("record {record}: schema mismatch: {detail}")]
    SchemaMismatch { record: usize, detail: String },

    #[error("record {record}: non-finite numeric value in {field}")]
    NonFinite { record: usize, field: String },

    #[error("record {record}: missing required field `{field}`")]
    MissingField { record: usize, field: String },

    #[error("record {record}: payload kind `{found}` does not match `{expected}`")]
    KindMismatch {
        record: usize,
        expected: String,
        found: String,
    },

    #[error("record {record}: {detail}")]
    Config { record: usize, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate rule: {0}")]
    DegenerateRule(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by malformed or inconsistent input, as opposed
    /// to I/O failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
