//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trajectory diverged at iteration {iteration}")]
    Diverged { iteration: u64 },

    #[error("all {replicates} replicates diverged")]
    AllDiverged { replicates: u64 },

    #[error("infeasible: {constraint}")]
    Infeasible { constraint: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point iteration for M did not converge in {iterations} steps (last iterates {last} -> {current})")]
    FixedPointDiverged {
        iterations: usize,
        last: f64,
        current: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("summary schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("summary schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
