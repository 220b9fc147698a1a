use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no legal CTC path: {0}")]
    InfeasibleAlignment(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("corpus produced no sequences ({skipped} skipped)")]
    EmptyCorpus { skipped: usize },

    #[error("datastore is empty")]
    EmptyDatastore,

    #[error("need {requested} sequences, datastore has {available}")]
    InsufficientSequences { requested: usize, available: usize },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error("format violation: {0}")]
    FormatViolation(String),

    #[error("adapter weights contain non-finite values")]
    NonFiniteWeights,

    #[error("reference is empty")]
    EmptyReference,

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable machine-readable name, printed by the CLI on failure.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InfeasibleAlignment(_) => "InfeasibleAlignment",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::InvalidParams(_) => "InvalidParams",
            Error::EmptyCorpus { .. } => "EmptyCorpus",
            Error::EmptyDatastore => "EmptyDatastore",
            Error::InsufficientSequences { .. } => "InsufficientSequences",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptFile { .. } => "CorruptFile",
            Error::FormatViolation(_) => "FormatViolation",
            Error::NonFiniteWeights => "NonFiniteWeights",
            Error::EmptyReference => "EmptyReference",
            Error::UnknownStrategy(_) => "UnknownStrategy",
            Error::IoFailure { .. } => "IoFailure",
            Error::Json { .. } => "CorruptFile",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::IoFailure {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::CorruptFile {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
