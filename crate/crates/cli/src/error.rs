//! Harness-level errors, grouped into categories that map one-to-one onto
//! process exit codes: configuration 2, checkpoint 3, i/o 4, training or
//! evaluation 5.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u16, expected: u16 },

    #[error("checkpoint fingerprint does not match the configured backbone")]
    FingerprintMismatch,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] miqa_core::Error),
}

impl CliError {
    /// Process exit code for this error's category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::CorruptCheckpoint(_)
            | CliError::CheckpointVersion { .. }
            | CliError::FingerprintMismatch => 3,
            CliError::Io(_) => 4,
            CliError::Core(miqa_core::Error::Io(_)) => 4,
            CliError::Core(miqa_core::Error::Parse(_)) => 4,
            CliError::Core(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
