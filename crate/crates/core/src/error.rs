use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("word `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("segment of length {len} exceeds max_seq_len {max}")]
    SegmentTooLong { len: usize, max: usize },

    #[error(
        "question ({question} tokens) and memory ({memory} tokens) leave no room for context \
         with overlap {overlap} in max_seq_len {max}; use a smaller memory cap k"
    )]
    NoContextRoom {
        question: usize,
        memory: usize,
        overlap: usize,
        max: usize,
    },

    #[error("invalid loss input: {0}")]
    InvalidLoss(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("the language-modeling head must be frozen before it is used for uncertainty estimation")]
    LmHeadNotFrozen,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status by error category: 2 usage or configuration,
    /// 3 missing input, 4 malformed data, 5 training failure, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::NoContextRoom { .. } | Error::SegmentTooLong { .. } => 2,
            Error::Missing(_) => 3,
            Error::Parse { .. }
            | Error::OutOfVocabulary(_)
            | Error::EmptyCorpus
            | Error::LengthMismatch(_)
            | Error::IdMismatch(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => 4,
            Error::InvalidLoss(_) | Error::NonFiniteGradient(_) | Error::LmHeadNotFrozen => 5,
            Error::Io(_) => 1,
        }
    }
}
