use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::pipeline::{PipelineTopology, ResetMode};

/// Named hyperparameter sets. `Full` is the full-scale configuration;
/// `Desk` shrinks buffer, batch, environment count and network width so a
/// full run fits a laptop CPU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Desk,
}

impl FromStr for Preset {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            _ => Err(RlError::Config(format!("unknown preset `{s}` (expected full or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub policy_lr: f64,
    pub q_lr: f64,
    pub adam_eps: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    pub learning_starts: usize,
    pub tau: f64,
    /// Actor and temperature updates happen every this many steps, each time
    /// performing this many updates.
    pub policy_frequency: usize,
    pub target_frequency: usize,
    pub autotune: bool,
    /// Fixed temperature when `autotune` is off, and the starting value otherwise.
    pub alpha: f64,
    /// Target entropy is `-scale · action_dim`.
    pub target_entropy_scale: f64,
    pub critic_hidden: Vec<usize>,
}

impl SacConfig {
    pub fn preset(p: Preset) -> Self {
        let full = Self {
            policy_lr: 3e-4,
            q_lr: 1e-3,
            adam_eps: 1e-8,
            buffer_size: 1_000_000,
            batch_size: 256,
            learning_starts: 10_000,
            tau: 0.005,
            policy_frequency: 2,
            target_frequency: 1,
            autotune: true,
            alpha: 1.0,
            target_entropy_scale: 1.0,
            critic_hidden: vec![256, 256],
        };
        match p {
            Preset::Full => full,
            Preset::Desk => Self {
                buffer_size: 100_000,
                batch_size: 64,
                learning_starts: 1_000,
                critic_hidden: vec![64, 64],
                ..full
            },
        }
    }
}

impl Default for SacConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    pub adam_eps: f64,
    pub n_envs: usize,
    pub rollout_len: usize,
    pub epochs: usize,
    /// Minibatches are formed from whole environment rows so that every
    /// sequence is unrolled from its start.
    pub minibatches: usize,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub norm_adv: bool,
    pub max_grad_norm: f64,
    pub anneal_lr: bool,
    pub critic_hidden: Vec<usize>,
}

impl PpoConfig {
    pub fn preset(p: Preset) -> Self {
        let full = Self {
            lr: 2.5e-4,
            adam_eps: 1e-5,
            n_envs: 32,
            rollout_len: 32,
            epochs: 4,
            minibatches: 4,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            norm_adv: true,
            max_grad_norm: 0.5,
            anneal_lr: true,
            critic_hidden: vec![256, 256],
        };
        match p {
            Preset::Full => full,
            Preset::Desk => Self { n_envs: 8, critic_hidden: vec![64, 64], ..full },
        }
    }
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Sub-trajectory unroll length `k`; defaults to the longest path + 2.
    pub unroll: Option<usize>,
    /// Hidden-buffer initialisation; defaults to zeros for SAC and an
    /// instantaneous pass for PPO.
    pub reset: Option<ResetMode>,
    pub sac: SacConfig,
    pub ppo: PpoConfig,
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        Self {
            gamma: 0.99,
            unroll: None,
            reset: None,
            sac: SacConfig::preset(p),
            ppo: PpoConfig::preset(p),
        }
    }

    pub fn unroll_len(&self, topo: &PipelineTopology) -> Result<usize, RlError> {
        let longest = topo.delay_ticks().1;
        match self.unroll {
            None => Ok(longest + 2),
            Some(k) if k < longest => Err(RlError::Config(format!(
                "unroll length {k} is shorter than the longest pipeline path ({longest})"
            ))),
            Some(k) => Ok(k),
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |what: &str| Err(RlError::Config(format!("{what} must be positive")));
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return Err(RlError::Config(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        let s = &self.sac;
        for (name, v) in [
            ("sac.policy_lr", s.policy_lr),
            ("sac.q_lr", s.q_lr),
            ("sac.adam_eps", s.adam_eps),
            ("sac.tau", s.tau),
            ("sac.alpha", s.alpha),
            ("ppo.lr", self.ppo.lr),
            ("ppo.adam_eps", self.ppo.adam_eps),
            ("ppo.clip_eps", self.ppo.clip_eps),
            ("ppo.max_grad_norm", self.ppo.max_grad_norm),
        ] {
            if !(v > 0.0) {
                return bad(name);
            }
        }
        for (name, v) in [
            ("sac.buffer_size", s.buffer_size),
            ("sac.batch_size", s.batch_size),
            ("sac.policy_frequency", s.policy_frequency),
            ("sac.target_frequency", s.target_frequency),
            ("ppo.n_envs", self.ppo.n_envs),
            ("ppo.rollout_len", self.ppo.rollout_len),
            ("ppo.epochs", self.ppo.epochs),
            ("ppo.minibatches", self.ppo.minibatches),
        ] {
            if v == 0 {
                return bad(name);
            }
        }
        if self.ppo.n_envs % self.ppo.minibatches != 0 {
            return Err(RlError::Config(format!(
                "ppo.n_envs ({}) must be a multiple of ppo.minibatches ({})",
                self.ppo.n_envs, self.ppo.minibatches
            )));
        }
        if !(0.0..=1.0).contains(&self.ppo.gae_lambda) {
            return Err(RlError::Config("ppo.gae_lambda not in [0, 1]".into()));
        }
        if !(s.tau <= 1.0) {
            return Err(RlError::Config("sac.tau must be at most 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}
