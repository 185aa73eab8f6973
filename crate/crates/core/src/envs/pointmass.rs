use rand::Rng as _;

use super::{check_action, Action, ActionSpace, Env, EnvError, EnvSpec, StepResult};
use crate::numerics::{Rng, RngStream};

/// Planar double integrator. Each step applies acceleration `a ∈ [−1, 1]²`
/// exactly over `dt`: `x ← x + v·dt + ½·a·dt²`, `v ← v + a·dt`. Position is
/// confined to `[−BOUND, BOUND]²` (velocity into a wall is zeroed). Reward
/// is `−‖x − goal‖` after the move. Observation `[x, v, goal]`.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
    rng: Rng,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const BOUND: f64 = 2.0;
    pub const GOAL_RANGE: f64 = 1.0;

    pub fn new(seed: u64) -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass".into(),
                obs_dim: 6,
                action_space: ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 },
                max_steps: 200,
                noop_action: Some(Action::Continuous(vec![0.0, 0.0])),
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            done: true,
            rng: RngStream::new(seed).substream("pointmass"),
        }
    }

    pub fn with_goal(mut self, goal: [f64; 2]) -> Self {
        self.goal = goal;
        self
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]]
    }

    /// Starts at rest at the origin with the current goal kept.
    pub fn reset_keep_goal(&mut self) -> Vec<f64> {
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.done = false;
        self.observe()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let g = Self::GOAL_RANGE;
        self.goal = [self.rng.random_range(-g..g), self.rng.random_range(-g..g)];
        self.reset_keep_goal()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_action(&self.spec, action)?;
        let Action::Continuous(a) = action else { unreachable!("checked") };
        let dt = Self::DT;
        for i in 0..2 {
            let acc = a[i].clamp(-1.0, 1.0);
            let x = self.pos[i] + self.vel[i] * dt + 0.5 * acc * dt * dt;
            self.vel[i] += acc * dt;
            if x.abs() > Self::BOUND {
                self.pos[i] = x.clamp(-Self::BOUND, Self::BOUND);
                self.vel[i] = 0.0;
            } else {
                self.pos[i] = x;
            }
        }
        self.steps += 1;
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        let reward = -(dx * dx + dy * dy).sqrt();
        let truncated = self.steps >= self.spec.max_steps;
        self.done = truncated;
        Ok(StepResult { obs: self.observe(), reward, terminated: false, truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_keeps_position() {
        let mut env = PointMass::new(0);
        env.reset();
        for _ in 0..10 {
            env.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        }
        assert_eq!(env.position(), [0.0, 0.0]);
    }

    #[test]
    fn constant_acceleration_kinematics() {
        let mut env = PointMass::new(0);
        env.reset();
        for t in 1..=15 {
            env.step(&Action::Continuous(vec![1.0, -1.0])).unwrap();
            let want = 0.5 * (t * t) as f64 * PointMass::DT * PointMass::DT;
            assert!((env.position()[0] - want).abs() < 1e-12);
            assert!((env.position()[1] + want).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_length_and_bounds() {
        let mut env = PointMass::new(1);
        env.reset();
        let mut n = 0;
        loop {
            n += 1;
            let r = env.step(&Action::Continuous(vec![1.0, 1.0])).unwrap();
            assert!(env.position().iter().all(|p| p.abs() <= PointMass::BOUND));
            if r.done() {
                break;
            }
        }
        assert_eq!(n, 200);
    }
}
