use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Invariant,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: token id {id} at position {position} is out of range for vocabulary size {vocab_size}")]
    TokenOutOfRange {
        line: usize,
        position: usize,
        id: u64,
        vocab_size: usize,
    },

    #[error("token id {id} is out of range for vocabulary size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("line {line}: empty line")]
    EmptyLine { line: usize },

    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: negative entropy value {value}")]
    NegativeEntropy { line: usize, value: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("alignment row {row}: {reason}")]
    Alignment { row: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::Invariant(_) => ErrorKind::Invariant,
            Error::InFile { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    /// Attach a file path to the error for diagnostics.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ Error::InFile { .. } => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
