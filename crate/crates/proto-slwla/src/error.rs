//! Error type shared across the crate, with CLI exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed record in a data file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input violates a documented contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// Episode sampling could not satisfy the request.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Bad flag/config-file combination, caught before any compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// Missing file, unknown encoder, or other environment problem.
    #[error("environment error: {0}")]
    Environment(String),

    /// Checkpoint or config produced by an incompatible version.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    /// Training produced a non-finite loss.
    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 0 success, 1 usage/config, 2 data,
    /// 3 environment, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Sampling(_)
            | Error::Compatibility(_) => 2,
            Error::Environment(_) | Error::Io(_) => 3,
            Error::Divergence(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
