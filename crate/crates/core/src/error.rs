use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no delimited PET span found")]
    MissingPet,
    #[error("more than one delimited PET span found")]
    MultiplePets,
    #[error("delimited PET span is empty")]
    EmptyPet,
    #[error("invalid delimiters: {0}")]
    InvalidDelimiters(String),
    #[error("invalid label {0:?}, expected 0 or 1")]
    InvalidLabel(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("zero-norm vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("span {start}..{end} out of bounds for text of {len} chars")]
    Span { start: usize, end: usize, len: usize },
    #[error("token list is empty")]
    EmptyTokens,
    #[error("no sense inventory entry usable for PET {0:?}")]
    MissingSense(String),
    #[error("no embedding for example {0:?}")]
    MissingEmbedding(String),
    #[error("unknown example id {0:?}")]
    UnknownExample(String),
    #[error("correction for {0:?} does not refer to a flagged example")]
    UnflaggedCorrection(String),
    #[error("no token of example {0:?} overlaps its PET span")]
    SpanAlignment(String),
    #[error("shape error: {0}")]
    Shape(String),

    #[error("datastore is empty")]
    EmptyDatastore,
    #[error("value out of range: {0}")]
    Range(String),
    #[error("majority vote needs an odd number of voters, got {0}")]
    EvenEnsemble(usize),
    #[error("augmented example {0:?} collides with a held-out id")]
    IdCollision(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
