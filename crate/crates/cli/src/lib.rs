//! Experiment runner for the adaptive-clipping library.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] adaclip::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} run(s) failed")]
    RunsFailed(usize),
}

impl CliError {
    /// 2 for bad input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Library(adaclip::Error::Configuration(_) | adaclip::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
