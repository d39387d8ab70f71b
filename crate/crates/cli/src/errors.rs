//! CLI error split: usage problems exit 2, module errors exit 1.

use std::fmt;

use gcd_core::GcdError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values; exit code 2.
    Usage(String),
    /// An underlying module rejected the run; exit code 1.
    Module(GcdError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Module(e) => write!(f, "{e}"),
        }
    }
}

impl From<GcdError> for CliError {
    fn from(e: GcdError) -> Self {
        CliError::Module(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Module(GcdError::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
