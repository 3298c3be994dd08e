use qdm_core::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files.
    #[error("config error: {0}")]
    Config(String),
    /// Parameters parse but violate an invariant.
    #[error("validation error:\n{0}")]
    Validation(String),
    /// Numerical or I/O failure while running.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    /// Core error raised while interpreting user input.
    pub fn input(context: &str, err: Error) -> Self {
        match err {
            Error::Parse { line, message } => CliError::Config(format!("{context}:{line}: {message}")),
            other => CliError::Config(format!("{context}: {other}")),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        match err {
            Error::Parse { line, message } => CliError::Config(format!("line {line}: {message}")),
            Error::Invalid(m) => CliError::Config(m),
            Error::WindowOutOfBounds { .. } | Error::SeriesTooShort { .. } | Error::Index { .. } => {
                CliError::Config(err.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
