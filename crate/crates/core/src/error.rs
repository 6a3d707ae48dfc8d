use std::io;

use thiserror::Error;

/// Errors produced anywhere in the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown prompt template: {0}")]
    UnknownTemplate(String),

    #[error("prompt scaffold needs {needed} tokens but max sequence length is {max}")]
    TooLong { needed: usize, max: usize },

    #[error("input text is empty")]
    EmptyText,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad denoise schedule: {0}")]
    BadSchedule(String),

    #[error("representation set carries no logits")]
    MissingLogits,

    #[error("sparse vectors were built with different content-word filters")]
    FilterMismatch,

    #[error("query id mismatch: {0} vs {1}")]
    QueryIdMismatch(String, String),

    #[error("duplicate document id: {0}")]
    DuplicateDoc(String),

    #[error("index would be empty")]
    EmptyIndex,

    #[error("{rows} rows cannot support {centroids} centroids")]
    TooFewRows { rows: usize, centroids: usize },

    #[error("positive index {index} out of range for pool of {pool}")]
    BadIndex { index: usize, pool: usize },

    #[error("training batch is empty")]
    EmptyBatch,

    #[error("no passage index for k_p = {0}")]
    MissingIndex(usize),

    #[error("incomplete budget grid: {0}")]
    IncompleteGrid(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code, used as the prefix of command-line error messages.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownTemplate(_) => "E_TEMPLATE",
            Error::TooLong { .. } => "E_TOO_LONG",
            Error::EmptyText => "E_EMPTY_TEXT",
            Error::DimensionMismatch(_) => "E_DIM",
            Error::BadSchedule(_) => "E_SCHEDULE",
            Error::MissingLogits => "E_NO_LOGITS",
            Error::FilterMismatch => "E_FILTER",
            Error::QueryIdMismatch(..) => "E_QID",
            Error::DuplicateDoc(_) => "E_DUP_DOC",
            Error::EmptyIndex => "E_EMPTY_INDEX",
            Error::TooFewRows { .. } => "E_FEW_ROWS",
            Error::BadIndex { .. } => "E_BAD_INDEX",
            Error::EmptyBatch => "E_EMPTY_BATCH",
            Error::MissingIndex(_) => "E_MISSING_INDEX",
            Error::IncompleteGrid(_) => "E_GRID",
            Error::LengthMismatch(..) => "E_LENGTH",
            Error::InvalidArgument(_) => "E_ARG",
            Error::Format(_) => "E_FORMAT",
            Error::Parse { .. } => "E_PARSE",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
