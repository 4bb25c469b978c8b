use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt DEX layout: field `{field}`: {detail}")]
    CorruptLayout { field: &'static str, detail: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("sample `{sample}` lacks the {modality} modality")]
    ModalityMissing {
        sample: String,
        modality: &'static str,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by a bad configuration or parameter rather
    /// than by bad data.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Configuration(_) | Error::Usage(_)
        )
    }
}
