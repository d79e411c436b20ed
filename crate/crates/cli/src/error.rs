use smlm_core::Error;
use thiserror::Error;

/// Process exit codes. Stable: scripts may rely on them.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or configuration; the subcommand's usage is printed.
    #[error("{message}")]
    Usage { message: String, command: Option<&'static str> },
    /// Unreadable, corrupt or mismatched input data.
    #[error("{0}")]
    Data(String),
    /// Non-finite values, singular systems or failed gradient checks.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn usage(command: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage { message: message.into(), command: Some(command) }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => exit::USAGE,
            CliError::Data(_) => exit::DATA,
            CliError::Numerical(_) => exit::NUMERICAL,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Config(_) | Error::UnknownZernike(_) => CliError::Usage { message, command: None },
            Error::NonFinite { .. } | Error::SingularFisher { .. } => CliError::Numerical(message),
            _ => CliError::Data(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
