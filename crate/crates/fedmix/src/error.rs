//! Error type shared across the crate.

use thiserror::Error;

/// Unified error for configuration, data, and numerical failures.
///
/// The three non-IO variants map onto the CLI exit codes: config errors
/// exit 1, data errors exit 2, numerical failures exit 3. IO errors are
/// treated as data errors.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or violated operation precondition.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset ingestion, schema, or shape problem.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite value encountered during optimization or verification.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
