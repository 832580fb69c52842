use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("document has no clause content")]
    EmptyDocument,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document {doc_id}: {rule}")]
    Validation { doc_id: String, rule: String },

    #[error("non-finite loss on document {doc_id}")]
    NonFinite { doc_id: String },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
