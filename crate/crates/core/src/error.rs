use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// The variants are grouped by the CLI exit code they map to (see
/// [`Error::exit_code`]): configuration problems, data/format problems and
/// numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("cache format error: {0}")]
    Format(String),

    #[error("unsupported cache version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("dataset fingerprint does not match the cache")]
    Fingerprint,

    #[error("truncated cache file: {0}")]
    Truncated(String),

    #[error("cache is missing required data: {0}")]
    CacheCorrupt(String),

    #[error("symbolic instance refused: {0}")]
    SymbolicLimit(String),

    #[error("provenance polynomials use different multiplication modes")]
    ModeMismatch,

    #[error("token p{0} has no assignment")]
    UnassignedToken(u32),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::SymbolicLimit(_) | Error::ModeMismatch => 2,
            Error::Divergence { .. } | Error::Numeric(_) | Error::UndefinedMetric(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
