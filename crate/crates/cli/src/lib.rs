//! Experiment runner: configuration files, subcommands and output layout.

pub mod commands;
pub mod config;
mod plot;

use std::path::PathBuf;

use rtpipe::rl::Preset;
use thiserror::Error;

pub use commands::{cmd_bench, cmd_eval, cmd_regret, cmd_train, SeedResult};
pub use config::{load_experiment, EvalConfig, ExperimentConfig, TopologySpec, WrapperSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub preset: Option<Preset>,
}
