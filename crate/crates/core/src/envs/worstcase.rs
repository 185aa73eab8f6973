use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_action, Action, ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::numerics::{Rng, RngStream};

/// How the action steers the designated successor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Successor `s + 1 (mod n)` regardless of the action.
    #[default]
    Independent,
    /// Successor `s + 1 + a (mod n)`: the action moves the chain.
    ActionShift,
}

/// `n` states on a cycle. With probability `p` the chain moves to the
/// designated successor, otherwise to one of the other `n − 1` states
/// uniformly. Reward is 1 when the action names the current state.
#[derive(Clone, Debug)]
pub struct WorstCase {
    spec: EnvSpec,
    n: usize,
    p: f64,
    coupling: Coupling,
    state: usize,
    steps: usize,
    done: bool,
    rng: Rng,
}

impl WorstCase {
    pub fn new(n_states: usize, p: f64, seed: u64) -> Result<Self, EnvError> {
        if n_states < 2 {
            return Err(EnvError::Config(format!("need at least 2 states, got {n_states}")));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(EnvError::Config(format!("p = {p} outside (0, 1]")));
        }
        if p < 1.0 / n_states as f64 {
            return Err(EnvError::Config(format!(
                "p = {p} is below 1/{n_states}: the residual mass would exceed the successor's"
            )));
        }
        let spec = EnvSpec {
            name: format!("worstcase(n={n_states},p={p})"),
            obs_dim: n_states,
            action_space: ActionSpace::Discrete(n_states),
            max_steps: 1000,
            noop_action: None,
        };
        Ok(Self {
            spec,
            n: n_states,
            p,
            coupling: Coupling::Independent,
            state: 0,
            steps: 0,
            done: true,
            rng: RngStream::new(seed).substream("worstcase"),
        })
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.spec.max_steps = max_steps;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn successor(&self, s: usize, a: usize) -> usize {
        match self.coupling {
            Coupling::Independent => (s + 1) % self.n,
            Coupling::ActionShift => (s + 1 + a) % self.n,
        }
    }

    /// `P(· | s, a)`
    pub fn transition_row(&self, s: usize, a: usize) -> Vec<f64> {
        let rest = (1.0 - self.p) / (self.n - 1) as f64;
        let mut row = vec![rest; self.n];
        row[self.successor(s, a)] = self.p;
        row
    }

    /// `P(s' | s)` for the action-independent coupling.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|s| self.transition_row(s, 0)).collect()
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        v[self.state] = 1.0;
        v
    }

    fn sample_next(&mut self, a: usize) -> usize {
        let succ = self.successor(self.state, a);
        if self.rng.random::<f64>() < self.p {
            succ
        } else {
            // uniform over the n − 1 non-successor states
            let k = self.rng.random_range(0..self.n - 1);
            if k >= succ {
                k + 1
            } else {
                k
            }
        }
    }
}

impl Env for WorstCase {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = self.rng.random_range(0..self.n);
        self.steps = 0;
        self.done = false;
        self.one_hot()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_action(&self.spec, action)?;
        let a = action.discrete().expect("checked");
        let reward = if a == self.state { 1.0 } else { 0.0 };
        self.state = self.sample_next(a);
        self.steps += 1;
        let truncated = self.steps >= self.spec.max_steps;
        self.done = truncated;
        Ok(StepResult { obs: self.one_hot(), reward, terminated: false, truncated })
    }

    fn state_index(&self) -> Option<usize> {
        Some(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stochastic() {
        for (n, p) in [(2, 0.5), (5, 0.8), (64, 0.8), (7, 1.0)] {
            let env = WorstCase::new(n, p, 0).unwrap().with_coupling(Coupling::ActionShift);
            for s in 0..n {
                for a in 0..n {
                    let sum: f64 = env.transition_row(s, a).iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_p() {
        assert!(WorstCase::new(4, 0.2, 0).is_err());
        assert!(WorstCase::new(4, 0.0, 0).is_err());
        assert!(WorstCase::new(4, 1.1, 0).is_err());
        assert!(WorstCase::new(1, 1.0, 0).is_err());
        assert!(WorstCase::new(4, 0.25, 0).is_ok());
    }

    #[test]
    fn deterministic_cycle_is_trackable() {
        let mut env = WorstCase::new(5, 1.0, 3).unwrap();
        let obs = env.reset();
        let mut s = obs.iter().position(|v| *v == 1.0).unwrap();
        for _ in 0..20 {
            let r = env.step(&Action::Discrete(s)).unwrap();
            assert_eq!(r.reward, 1.0);
            s = (s + 1) % 5;
        }
    }

    #[test]
    fn step_after_done_errors() {
        let mut env = WorstCase::new(3, 0.9, 0).unwrap().with_max_steps(2);
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::StepAfterDone));
        env.reset();
        env.step(&Action::Discrete(0)).unwrap();
        assert!(env.step(&Action::Discrete(0)).unwrap().truncated);
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::StepAfterDone));
        assert!(env.step(&Action::Discrete(9)).is_err());
    }
}
