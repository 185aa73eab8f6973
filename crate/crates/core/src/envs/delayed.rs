use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_action, Action, Env, EnvError, EnvSpec, StepResult};
use crate::numerics::{Rng, RngStream};

/// Behaviour during the `d − 1` environment steps between agent decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultPolicy {
    RepeatLastAction,
    FixedAction(Action),
    Noop,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    #[serde(default)]
    pub past_actions: usize,
    #[serde(default)]
    pub past_obs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayedEnvConfig {
    pub delay: usize,
    pub default_policy: DefaultPolicy,
    #[serde(default)]
    pub sticky_prob: f64,
    #[serde(default)]
    pub aug: Augmentation,
}

impl DelayedEnvConfig {
    pub fn plain(delay: usize) -> Self {
        Self {
            delay,
            default_policy: DefaultPolicy::RepeatLastAction,
            sticky_prob: 0.0,
            aug: Augmentation::default(),
        }
    }

    pub fn with_aug(mut self, past_actions: usize, past_obs: usize) -> Self {
        self.aug = Augmentation { past_actions, past_obs };
        self
    }
}

/// Observation plus recent agent actions (newest first, zero before the
/// episode start) and recent observations (newest first, padded with the
/// episode's first observation).
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedObs {
    pub obs: Vec<f64>,
    pub recent_actions: Vec<Vec<f64>>,
    pub recent_obs: Vec<Vec<f64>>,
}

impl AugmentedObs {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.obs.clone();
        for a in &self.recent_actions {
            v.extend_from_slice(a);
        }
        for o in &self.recent_obs {
            v.extend_from_slice(o);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayedStep {
    pub obs: AugmentedObs,
    /// Sum of the inner rewards.
    pub reward: f64,
    pub inner_rewards: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

/// One agent decision drives `delay` environment steps: the agent's action
/// first, then the default policy. Inner steps stop at episode end.
pub struct DelayedEnv<E: Env> {
    inner: E,
    cfg: DelayedEnvConfig,
    spec: EnvSpec,
    last_executed: Option<Action>,
    actions: VecDeque<Vec<f64>>,
    history: VecDeque<Vec<f64>>,
    current: Vec<f64>,
    done: bool,
    rng: Rng,
}

impl<E: Env> DelayedEnv<E> {
    pub fn new(inner: E, cfg: DelayedEnvConfig, seed: u64) -> Result<Self, EnvError> {
        if cfg.delay == 0 {
            return Err(EnvError::Config("delay must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.sticky_prob) {
            return Err(EnvError::Config(format!("sticky_prob {} not in [0, 1]", cfg.sticky_prob)));
        }
        let base = inner.spec().clone();
        match &cfg.default_policy {
            DefaultPolicy::Noop if base.noop_action.is_none() => {
                return Err(EnvError::Config(format!("{} has no no-op action", base.name)));
            }
            DefaultPolicy::FixedAction(a) => check_action(&base, a)?,
            _ => {}
        }
        let act_dim = base.action_space.encoded_dim();
        let spec = EnvSpec {
            name: format!("{}+delay{}", base.name, cfg.delay),
            obs_dim: base.obs_dim * (1 + cfg.aug.past_obs) + act_dim * cfg.aug.past_actions,
            action_space: base.action_space.clone(),
            max_steps: base.max_steps.div_ceil(cfg.delay),
            noop_action: base.noop_action.clone(),
        };
        Ok(Self {
            inner,
            cfg,
            spec,
            last_executed: None,
            actions: VecDeque::new(),
            history: VecDeque::new(),
            current: Vec::new(),
            done: true,
            rng: RngStream::new(seed).substream("delayed-env"),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn config(&self) -> &DelayedEnvConfig {
        &self.cfg
    }

    fn augmented(&self) -> AugmentedObs {
        AugmentedObs {
            obs: self.current.clone(),
            recent_actions: self.actions.iter().cloned().collect(),
            recent_obs: self.history.iter().cloned().collect(),
        }
    }

    pub fn reset_augmented(&mut self) -> AugmentedObs {
        let obs = self.inner.reset();
        let act_dim = self.spec.action_space.encoded_dim();
        self.actions = std::iter::repeat_n(vec![0.0; act_dim], self.cfg.aug.past_actions).collect();
        self.history = std::iter::repeat_n(obs.clone(), self.cfg.aug.past_obs).collect();
        self.current = obs;
        self.last_executed = None;
        self.done = false;
        self.augmented()
    }

    fn executed(&mut self, intended: Action) -> Action {
        if let Some(prev) = &self.last_executed {
            if self.cfg.sticky_prob > 0.0 && self.rng.random::<f64>() < self.cfg.sticky_prob {
                return prev.clone();
            }
        }
        intended
    }

    pub fn step_delayed(&mut self, action: &Action) -> Result<DelayedStep, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_action(&self.spec, action)?;
        let mut inner_rewards = Vec::with_capacity(self.cfg.delay);
        let mut terminated = false;
        let mut truncated = false;
        let mut obs = self.current.clone();
        for k in 0..self.cfg.delay {
            let intended = if k == 0 {
                action.clone()
            } else {
                match &self.cfg.default_policy {
                    DefaultPolicy::RepeatLastAction => action.clone(),
                    DefaultPolicy::FixedAction(a) => a.clone(),
                    DefaultPolicy::Noop => self.spec.noop_action.clone().expect("checked in new"),
                }
            };
            let exec = self.executed(intended);
            let r = self.inner.step(&exec)?;
            self.last_executed = Some(exec);
            inner_rewards.push(r.reward);
            let done = r.done();
            (terminated, truncated) = (r.terminated, r.truncated);
            obs = r.obs;
            if done {
                break;
            }
        }
        let prev = std::mem::replace(&mut self.current, obs);
        if self.cfg.aug.past_obs > 0 {
            self.history.pop_back();
            self.history.push_front(prev);
        }
        if self.cfg.aug.past_actions > 0 {
            self.actions.pop_back();
            self.actions.push_front(action.encode(&self.spec.action_space));
        }
        self.done = terminated || truncated;
        Ok(DelayedStep {
            obs: self.augmented(),
            reward: inner_rewards.iter().sum(),
            inner_rewards,
            terminated,
            truncated,
        })
    }
}

impl<E: Env> Env for DelayedEnv<E> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.reset_augmented().flatten()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let s = self.step_delayed(action)?;
        Ok(StepResult {
            obs: s.obs.flatten(),
            reward: s.reward,
            terminated: s.terminated,
            truncated: s.truncated,
        })
    }

    fn state_index(&self) -> Option<usize> {
        self.inner.state_index()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PointMass, WorstCase};

    #[test]
    fn unit_delay_without_aug_is_identity() {
        let mut plain = WorstCase::new(6, 0.7, 4).unwrap();
        let mut wrapped =
            DelayedEnv::new(WorstCase::new(6, 0.7, 4).unwrap(), DelayedEnvConfig::plain(1), 0).unwrap();
        assert_eq!(plain.reset(), wrapped.reset());
        for t in 0..200 {
            let a = Action::Discrete(t % 6);
            assert_eq!(plain.step(&a).unwrap(), wrapped.step(&a).unwrap());
        }
    }

    #[test]
    fn action_history_is_zero_padded() {
        let cfg = DelayedEnvConfig::plain(2).with_aug(2, 1);
        let mut env = DelayedEnv::new(WorstCase::new(3, 0.9, 1).unwrap(), cfg, 0).unwrap();
        let first = env.reset_augmented();
        assert_eq!(first.recent_actions, vec![vec![0.0; 3]; 2]);
        assert_eq!(first.recent_obs, vec![first.obs.clone()]);
        let s1 = env.step_delayed(&Action::Discrete(2)).unwrap();
        assert_eq!(s1.obs.recent_actions, vec![vec![0.0, 0.0, 1.0], vec![0.0; 3]]);
        assert_eq!(s1.obs.recent_obs, vec![first.obs.clone()]);
        let s2 = env.step_delayed(&Action::Discrete(0)).unwrap();
        assert_eq!(s2.obs.recent_actions, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(s2.obs.recent_obs, vec![s1.obs.obs.clone()]);
        assert_eq!(env.spec().obs_dim, s2.obs.flatten().len());
    }

    #[test]
    fn noop_needs_support() {
        let cfg = DelayedEnvConfig { default_policy: DefaultPolicy::Noop, ..DelayedEnvConfig::plain(2) };
        assert!(DelayedEnv::new(WorstCase::new(3, 0.9, 1).unwrap(), cfg.clone(), 0).is_err());
        assert!(DelayedEnv::new(PointMass::new(0), cfg, 0).is_ok());
    }

    #[test]
    fn rewards_are_summed_over_inner_steps() {
        let cfg = DelayedEnvConfig::plain(3);
        let mut env = DelayedEnv::new(WorstCase::new(4, 0.6, 2).unwrap().with_max_steps(10), cfg, 0)
            .unwrap();
        env.reset();
        let mut steps = 0;
        loop {
            let s = env.step_delayed(&Action::Discrete(1)).unwrap();
            assert_eq!(s.reward, s.inner_rewards.iter().sum::<f64>());
            steps += s.inner_rewards.len();
            if s.truncated {
                break;
            }
        }
        assert_eq!(steps, 10);
        assert!(env.step(&Action::Discrete(0)).is_err());
    }
}
