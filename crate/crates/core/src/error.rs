use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: std::io::Error },
    MalformedJson(String),
    SchemaViolation { path: String, message: String },
    MisalignedAnswer { qid: String, answer_start: usize, expected: String, found: String },
    DuplicateQuestionId(String),
    AlignmentFailure(String),
    EmptyCorpus,
    ShapeMismatch(String),
    NonFinite(String),
    NonFiniteGradient(String),
    AllMasked { row: usize },
    IndexOutOfRange { index: usize, len: usize },
    TooLong { len: usize, max: usize },
    UnknownTokenId { id: usize, vocab_size: usize },
    EmptyContext,
    GoldOutOfWindow { start: usize, end: usize, max_answer_tokens: usize },
    CandidateTooLong { len: usize, max: usize },
    DimensionMismatch { expected: usize, found: usize },
    DuplicateEntry { ctx_id: String, start: usize, end: usize },
    UnknownContext(String),
    Format(String),
    ChecksumMismatch { stored: u32, computed: u32 },
    EmptyGolds,
    LengthMismatch { left: usize, right: usize },
    Config { key: String, message: String },
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    /// True for errors caused by inputs (files, datasets, configs) rather
    /// than by a bug or numeric breakdown inside the library.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedJson(_)
                | Error::SchemaViolation { .. }
                | Error::MisalignedAnswer { .. }
                | Error::DuplicateQuestionId(_)
                | Error::AlignmentFailure(_)
                | Error::EmptyCorpus
                | Error::UnknownContext(_)
                | Error::Format(_)
                | Error::ChecksumMismatch { .. }
                | Error::Config { .. }
                | Error::TooLong { .. }
                | Error::CandidateTooLong { .. }
                | Error::EmptyContext
                | Error::UnknownTokenId { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::MalformedJson(msg) => write!(f, "malformed JSON: {msg}"),
            Error::SchemaViolation { path, message } => write!(f, "schema violation at {path}: {message}"),
            Error::MisalignedAnswer { qid, answer_start, expected, found } => write!(
                f,
                "question {qid}: answer_start {answer_start} points at {found:?}, expected {expected:?}"
            ),
            Error::DuplicateQuestionId(id) => write!(f, "duplicate question id {id:?}"),
            Error::AlignmentFailure(msg) => write!(f, "answer alignment failed: {msg}"),
            Error::EmptyCorpus => write!(f, "no token reaches the minimum frequency"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::NonFiniteGradient(name) => write!(f, "non-finite gradient in parameter group {name:?}"),
            Error::AllMasked { row } => write!(f, "attention row {row} has no unmasked key"),
            Error::IndexOutOfRange { index, len } => write!(f, "index {index} out of range for length {len}"),
            Error::TooLong { len, max } => write!(f, "sequence of length {len} exceeds the limit of {max}"),
            Error::UnknownTokenId { id, vocab_size } => {
                write!(f, "token id {id} is outside the vocabulary of size {vocab_size}")
            }
            Error::EmptyContext => write!(f, "context has no tokens"),
            Error::GoldOutOfWindow { start, end, max_answer_tokens } => write!(
                f,
                "gold span [{start}, {end}] is longer than max_answer_tokens={max_answer_tokens}"
            ),
            Error::CandidateTooLong { len, max } => {
                write!(f, "candidate of {len} tokens cannot be packed within {max} positions")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::DuplicateEntry { ctx_id, start, end } => {
                write!(f, "duplicate index entry ({ctx_id}, {start}, {end})")
            }
            Error::UnknownContext(id) => write!(f, "unknown context id {id:?}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::ChecksumMismatch { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:08x}, computed {computed:08x}")
            }
            Error::EmptyGolds => write!(f, "at least one gold answer is required"),
            Error::LengthMismatch { left, right } => write!(f, "length mismatch: {left} vs {right}"),
            Error::Config { key, message } => write!(f, "config key {key}: {message}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
