//! Toy environments and the delayed-observation wrapper.

mod delayed;
mod doorkey;
mod markov;
mod pointmass;
mod worstcase;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delayed::{AugmentedObs, Augmentation, DefaultPolicy, DelayedEnv, DelayedEnvConfig, DelayedStep};
pub use doorkey::{Cell, DoorKey, DoorKeyLayout, DoorKeyAction, N_CELL_TYPES};
pub use markov::{markov_check, Conditioning, MarkovReport};
pub use pointmass::PointMass;
pub use worstcase::{Coupling, WorstCase};

use crate::numerics::fnv1a;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called after the episode ended; call reset first")]
    StepAfterDone,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("trace output: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the action's vector encoding (one-hot for discrete spaces).
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn encode(&self, space: &ActionSpace) -> Vec<f64> {
        match (self, space) {
            (Action::Discrete(a), ActionSpace::Discrete(n)) => {
                let mut v = vec![0.0; *n];
                if *a < *n {
                    v[*a] = 1.0;
                }
                v
            }
            (Action::Continuous(x), _) => x.clone(),
            (Action::Discrete(a), ActionSpace::Box { dim, .. }) => vec![*a as f64; *dim],
        }
    }

    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    fn label(&self) -> String {
        match self {
            Action::Discrete(a) => a.to_string(),
            Action::Continuous(x) => {
                x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub max_steps: usize,
    /// The action that leaves the system alone, when one exists.
    pub noop_action: Option<Action>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A seeded episodic state machine; the seed is fixed at construction and
/// every reset draws from the same stream.
pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
    /// Index of the current discrete state, for environments that have one.
    fn state_index(&self) -> Option<usize> {
        None
    }
}

impl Env for Box<dyn Env> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self) -> Vec<f64> {
        (**self).reset()
    }
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }
    fn state_index(&self) -> Option<usize> {
        (**self).state_index()
    }
}

pub(crate) fn check_action(spec: &EnvSpec, action: &Action) -> Result<(), EnvError> {
    match (&spec.action_space, action) {
        (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
        (ActionSpace::Box { dim, .. }, Action::Continuous(x))
            if x.len() == *dim && x.iter().all(|v| v.is_finite()) =>
        {
            Ok(())
        }
        _ => Err(EnvError::InvalidAction(format!("{action:?} for {:?}", spec.action_space))),
    }
}

/// Environment selection as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Worstcase {
        n_states: usize,
        p: f64,
        #[serde(default)]
        coupling: Coupling,
        #[serde(default = "default_worstcase_steps")]
        max_steps: usize,
    },
    Doorkey {
        #[serde(default = "default_doorkey_size")]
        size: usize,
    },
    Pointmass,
}

fn default_worstcase_steps() -> usize {
    1000
}

fn default_doorkey_size() -> usize {
    5
}

impl EnvConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Env>, EnvError> {
        Ok(match self {
            EnvConfig::Worstcase { n_states, p, coupling, max_steps } => Box::new(
                WorstCase::new(*n_states, *p, seed)?.with_coupling(*coupling).with_max_steps(*max_steps),
            ),
            EnvConfig::Doorkey { size } => Box::new(DoorKey::new(*size, seed)?),
            EnvConfig::Pointmass => Box::new(PointMass::new(seed)),
        })
    }
}

/// One row of an exported episode trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

pub fn obs_hash(obs: &[f64]) -> u64 {
    let bytes: Vec<u8> = obs.iter().flat_map(|v| v.to_le_bytes()).collect();
    fnv1a(&bytes)
}

/// Writes `tick,obs_hash,action,reward,done`; the hash is FNV-1a over the
/// little-endian bytes of the observation the action responded to.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), EnvError> {
    let io = |e: csv::Error| EnvError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "obs_hash", "action", "reward", "done"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.tick.to_string(),
            format!("{:016x}", obs_hash(&r.obs)),
            r.action.label(),
            format!("{}", r.reward),
            (r.done as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| EnvError::Io(e.to_string()))
}

/// Runs `policy` for up to `steps` environment steps, resetting after each
/// episode, and records every step.
pub fn record_trace(
    env: &mut dyn Env,
    steps: u64,
    mut policy: impl FnMut(&[f64]) -> Action,
) -> Result<Vec<TraceRow>, EnvError> {
    let mut rows = Vec::new();
    let mut obs = env.reset();
    for tick in 0..steps {
        let action = policy(&obs);
        let r = env.step(&action)?;
        rows.push(TraceRow { tick, obs: obs.clone(), action, reward: r.reward, done: r.done() });
        obs = if r.done() { env.reset() } else { r.obs };
    }
    Ok(rows)
}
