use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range ({allowed})")]
    Index { index: usize, allowed: &'static str },

    /// Parameter file could not be parsed.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameters: {0}")]
    Invalid(String),

    /// Iterative procedure failed to settle.
    #[error("no convergence after {iterations} iterations: {what}")]
    NonConvergence { iterations: usize, what: String },

    #[error("window {lo}..{hi} ps outside trace bounds {min}..{max} ps")]
    WindowOutOfBounds { lo: f64, hi: f64, min: f64, max: f64 },

    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
