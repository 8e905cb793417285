use thiserror::Error;

/// Errors raised by estimators, codecs and the attack lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("item {item} out of range for universe of size {m}")]
    ItemOutOfRange { item: u64, m: u64 },

    #[error("negative delta {delta} for item {item} in cash-register mode")]
    ModeViolation { item: u64, delta: i64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    Numeric(&'static str),

    #[error("statistic undefined: {0}")]
    Undefined(&'static str),

    #[error("corrupt or unsupported encoding: {0}")]
    Decode(String),

    #[error("snapshot holds a {found} state, expected {expected}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ItemOutOfRange { .. } => "out-of-range",
            Error::ModeViolation { .. } => "mode-violation",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Undefined(_) => "undefined",
            Error::Decode(_) => "decode",
            Error::KindMismatch { .. } => "kind-mismatch",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
