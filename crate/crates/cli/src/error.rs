use std::process::ExitCode;

use thiserror::Error;

/// Process exit statuses: 0 success, 1 usage or configuration error,
/// 2 numeric-check failure.
pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] mscsa_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) | CliError::Core(mscsa_core::Error::Numeric(_)) => EXIT_CHECK_FAILED,
            _ => EXIT_USAGE,
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// A numeric acceptance check did not pass.
    CheckFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => EXIT_OK,
            Status::CheckFailed => EXIT_CHECK_FAILED,
        }
    }

    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Success
        } else {
            Status::CheckFailed
        }
    }
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s.code())
    }
}
