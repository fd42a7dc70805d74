//! Exit-code bearing error type.
//!
//! Validation errors (bad flags, missing files, impossible geometry) exit
//! with 1; data errors (malformed or inconsistent input content) exit with
//! 2. Diagnostics go to stderr; stdout carries payloads only.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

/// Wraps a content-level failure of an input file as a data error.
pub fn data_err(context: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{context}: {err}"))
}

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
