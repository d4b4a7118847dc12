use thiserror::Error;

/// Library-wide error type. Variants are grouped by how callers should react:
/// argument errors are caller bugs or bad configs, I/O and parse errors come
/// from the filesystem, and numerical errors mean a computation left the
/// domain it was specified on.
#[derive(Debug, Error)]
pub enum Error {
    #[error("code length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("radius {radius} exceeds code length {bits}")]
    RadiusTooLarge { radius: usize, bits: usize },

    #[error("bucket count overflows u64 for b={bits}, r={radius}")]
    BallSizeOverflow { bits: usize, radius: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("stale forward cache: model at version {model}, cache built at version {cache}")]
    StaleCache { model: u64, cache: u64 },

    #[error("parse error at byte {offset}: {what}")]
    Parse { offset: u64, what: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse classification used by frontends to pick exit codes:
    /// `Usage` for bad arguments or malformed requests, `Io` for
    /// filesystem and format problems, `Numerical` for NaN/Inf aborts
    /// and invariant violations detected mid-computation.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::LengthMismatch { .. }
            | Error::DimMismatch { .. }
            | Error::RadiusTooLarge { .. }
            | Error::InvalidArgument(_)
            | Error::Degenerate(_) => ErrorClass::Usage,
            Error::Parse { .. } | Error::Csv(_) | Error::Io(_) => ErrorClass::Io,
            Error::BallSizeOverflow { .. }
            | Error::NonFinite { .. }
            | Error::StaleCache { .. } => ErrorClass::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Numerical,
}
