//! Library side of the command-line front end: configuration loading and
//! the four command implementations, kept callable for integration tests.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input from the user: config mistakes, missing files, malformed
    /// logs. Exit code 2.
    #[error("{0}")]
    User(String),
    /// Internal failure. Exit code 1.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> CliError {
        CliError::Internal(e.to_string())
    }

    pub fn user(e: impl std::fmt::Display) -> CliError {
        CliError::User(e.to_string())
    }
}
