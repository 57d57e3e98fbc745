use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("target index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("character {0:?} is not in the vocabulary")]
    OutOfVocabulary(char),

    #[error("input text is empty")]
    EmptyText,

    #[error("input is not valid UTF-8")]
    InvalidUtf8,

    #[error("corpus too short: {len} tokens, need at least {need}")]
    CorpusTooShort { len: usize, need: usize },

    #[error("corpus too small for batching: {len} tokens yield no full window at batch {batch}, bptt {bptt}")]
    CorpusTooSmall {
        len: usize,
        batch: usize,
        bptt: usize,
    },

    #[error("fraction {0} out of range (0, 1]")]
    FractionOutOfRange(f64),

    #[error("budget {budget} too small: minimum network has {min} parameters")]
    BudgetTooSmall { budget: usize, min: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid user input (bad flags, malformed
    /// files, out-of-range arguments) as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::Io(_) | Error::ShapeMismatch { .. }
        )
    }
}
