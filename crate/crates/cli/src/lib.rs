//! Command implementations behind the `lula-lab` binary.
//!
//! Each `cmd_*` function runs one pipeline stage from an
//! [`ExperimentConfig`] and writes plain-text reports. Errors map to process
//! exit codes through [`CliError::exit_code`].

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod demo;
pub mod pipeline;
pub mod report;

pub use commands::{cmd_eval, cmd_laplace, cmd_lula, cmd_train};
pub use config::ExperimentConfig;
pub use demo::cmd_demo_toy;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] lula_core::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A post-condition check failed.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
