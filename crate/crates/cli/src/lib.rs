//! Batch front end for model-free LQR experiments.
//!
//! Each subcommand reads a [`config::RunConfig`], writes its artifacts into an
//! output directory and tags them with the configuration hash, so a chain of
//! `generate → synthesize → baseline → compare` can be checked for
//! consistency and reproduced byte for byte.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

use thiserror::Error;

/// Failure of a subcommand, mapped to a process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("tolerance exceeded: {0}")]
    Tolerance(String),

    #[error("configuration hash mismatch: {0} (use --force to override)")]
    HashMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(mflqr::Error),
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const DEGENERATE: i32 = 3;
    pub const NON_CONVERGENCE: i32 = 4;
    pub const TOLERANCE: i32 = 5;
    pub const HASH_MISMATCH: i32 = 6;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => exit::PARSE,
            CliError::Degenerate(_) => exit::DEGENERATE,
            CliError::NonConvergence(_) => exit::NON_CONVERGENCE,
            CliError::Tolerance(_) => exit::TOLERANCE,
            CliError::HashMismatch(_) => exit::HASH_MISMATCH,
            CliError::Io(_) | CliError::Core(_) => exit::FAILURE,
        }
    }
}

impl From<mflqr::Error> for CliError {
    fn from(e: mflqr::Error) -> Self {
        use mflqr::Error as E;
        match e {
            E::SchemaViolation { .. } | E::NonUniformTime { .. } | E::NonFiniteValue { .. } | E::Csv(_) => {
                CliError::Parse(e.to_string())
            }
            E::DegenerateData(msg) => CliError::Degenerate(msg),
            E::MaxIterations(_) => CliError::NonConvergence(e.to_string()),
            E::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Core(other),
        }
    }
}
