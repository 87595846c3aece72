use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Data,
    Provider,
    Config,
    Fingerprint,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}: no valid entries")]
    EmptyDataset(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("contrast set violates invariants: {}", .0.join("; "))]
    InvalidContrastSet(Vec<String>),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("unknown entry id `{0}`")]
    UnknownEntry(String),

    #[error("gold answers of `{0}` and `{1}` are identical after normalization")]
    GoldCollision(String, String),

    #[error("graph has {edges} edges; brute-force matching is limited to {limit}")]
    GraphTooLarge { edges: usize, limit: usize },

    #[error("not enough entries: {0}")]
    InsufficientEntries(String),

    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("cosine of a zero vector is undefined")]
    ZeroVector,

    #[error("embedding provider `{provider}` failed: {reason}")]
    Provider { provider: String, reason: String },

    #[error("responder `{responder}` failed: {reason}")]
    Transport { responder: String, reason: String },

    #[error("prompt has {0} choices; letters only go up to Z")]
    TooManyChoices(usize),

    #[error("rankings cover different responders: {0}")]
    MismatchedKeys(String),

    #[error("Kendall's tau is undefined: {0}")]
    UndefinedTau(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Provider { .. } | Error::Transport { .. } => ErrorClass::Provider,
            Error::Config(_) | Error::TooManyChoices(_) => ErrorClass::Config,
            Error::FingerprintMismatch(_) => ErrorClass::Fingerprint,
            _ => ErrorClass::Data,
        }
    }
}
