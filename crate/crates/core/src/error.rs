use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("rank error: expected {expected}, got shape {shape:?}")]
    Rank { expected: &'static str, shape: Vec<usize> },
    #[error("invalid mask: row {row} has no allowed entry")]
    InvalidMask { row: usize },
    #[error("sequence too short: {len} frames, need at least {min}")]
    SequenceTooShort { len: usize, min: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("state error: {0}")]
    State(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint content error: {0}")]
    CheckpointContent(String),
    #[error("missing parameters: {}", names.join(", "))]
    MissingGroup { names: Vec<String> },
    #[error("cannot tokenize character {ch:?} at position {pos}")]
    Tokenize { ch: char, pos: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("no target frames: {frames} frames cannot supply shift {shift}")]
    EmptyTarget { frames: usize, shift: usize },
    #[error("infeasible alignment: {frames} frames cannot emit {labels} labels ({repeats} repeats)")]
    InfeasibleAlignment { frames: usize, labels: usize, repeats: usize },
    #[error("word error rate undefined: reference corpus has no tokens")]
    UndefinedWer,
    #[error("no positions masked after resampling")]
    NoMaskedPositions,
    #[error("non-finite loss at step {step} (batch {})", batch_ids.join(","))]
    NonFinite { step: u64, batch_ids: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable class name, used as the CLI error prefix.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::Rank { .. } => "dimension",
            Error::InvalidMask { .. } => "mask",
            Error::SequenceTooShort { .. } | Error::EmptyTarget { .. } => "sequence",
            Error::Config(_) | Error::Precondition(_) | Error::State(_) => "config",
            Error::UnsupportedFormat(_) | Error::Corrupt(_) => "format",
            Error::CheckpointFormat(_) | Error::CorruptCheckpoint(_) | Error::CheckpointContent(_) | Error::MissingGroup { .. } => {
                "checkpoint"
            }
            Error::Tokenize { .. } | Error::UnknownToken(_) => "tokenize",
            Error::InfeasibleAlignment { .. } | Error::UndefinedWer => "scoring",
            Error::NoMaskedPositions | Error::NonFinite { .. } => "training",
            Error::Io { .. } => "io",
        }
    }
}
