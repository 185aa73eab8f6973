//! SAC and PPO trainers for pipelined actors with undelayed critics.

mod agent;
mod buffer;
mod checkpoint;
mod config;
mod gae;
mod metrics;
mod mlp;
mod ppo;
mod sac;

pub use agent::{evaluate, pack_end_aligned, unroll, ActMode, Agent, Decision, EvalStats, PolicyHead};
pub use buffer::{ReplayBuffer, Transition};
pub use checkpoint::{Checkpoint, SCHEMA_VERSION};
pub use config::{PpoConfig, Preset, SacConfig, TrainConfig};
pub use gae::gae;
pub use metrics::{final_return, read_metrics, write_metrics, MetricsRow};
pub use mlp::Mlp;
pub use ppo::{ppo_train, Batch, PpoTrainer, Rollout};
pub use sac::{sac_train, SacTrainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::EnvError;
use crate::numerics::NumericsError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite {what} at env step {step}; aborting")]
    NonFinite { step: u64, what: &'static str },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub(crate) fn non_finite(step: u64, what: &'static str) -> RlError {
    RlError::NonFinite { step, what }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sac,
    Ppo,
}

/// Final actor plus the metrics stream of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub agent: Agent,
    pub metrics: Vec<MetricsRow>,
    pub env_steps: u64,
}
