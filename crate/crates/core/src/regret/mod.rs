//! Monte-Carlo regret accounting for delayed and inactive agents.
//!
//! Two copies of an environment are built from the same seed, so their
//! random draws line up step for step. One copy is driven by the undelayed
//! optimal policy, the other by the interaction pattern under test: a
//! policy that sees observations `d` steps late acts once every `spa`
//! steps, and a default policy β fills the steps in between. Rewards are
//! accumulated separately on the agent-action steps and on the β steps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Action, DefaultPolicy, Env, EnvError, WorstCase};
use crate::numerics::RngStream;
use crate::pipeline::ExecTime;

pub const MIN_ROLLOUTS: usize = 30;
const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum RegretError {
    #[error("invalid regret config: {0}")]
    Config(String),
    #[error("no optimal policy known for {0}; supply an oracle")]
    NoOracle(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("csv output: {0}")]
    Io(String),
}

/// Environments whose undelayed optimal action can be read off their state.
pub trait KnownOptimal: Env {
    fn optimal_action(&self) -> Option<Action>;
}

impl KnownOptimal for WorstCase {
    fn optimal_action(&self) -> Option<Action> {
        self.state_index().map(Action::Discrete)
    }
}

/// A policy that only sees a stale observation.
pub trait DelayedPolicy: Sync {
    /// Action for the current step given the observation from `lookahead`
    /// steps ago.
    fn act(&self, stale_obs: &[f64], lookahead: usize) -> Action;
}

/// Plays the most likely state `k` steps after the observed one, which is
/// the delayed-optimal choice when reward is 1 for naming the state and the
/// chain ignores the action.
#[derive(Clone, Debug)]
pub struct ModalSuccessor {
    // best[k][s] = argmax_j P^k[s, j]
    best: Vec<Vec<usize>>,
}

impl ModalSuccessor {
    pub fn new(transition: &[Vec<f64>], max_lookahead: usize) -> Self {
        let n = transition.len();
        let identity: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let mut power = identity;
        let mut best = Vec::with_capacity(max_lookahead + 1);
        for k in 0..=max_lookahead {
            if k > 0 {
                power = matmul(&power, transition);
            }
            best.push(power.iter().map(|row| argmax(row)).collect());
        }
        Self { best }
    }

    pub fn for_worstcase(env: &WorstCase, max_lookahead: usize) -> Self {
        Self::new(&env.transition_matrix(), max_lookahead)
    }

    pub fn max_lookahead(&self) -> usize {
        self.best.len() - 1
    }
}

impl DelayedPolicy for ModalSuccessor {
    fn act(&self, stale_obs: &[f64], lookahead: usize) -> Action {
        let k = lookahead.min(self.max_lookahead());
        Action::Discrete(self.best[k][argmax(stale_obs)])
    }
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; n];
            for (k, &aik) in row.iter().enumerate() {
                if aik != 0.0 {
                    for (o, bkj) in out.iter_mut().zip(&b[k]) {
                        *o += aik * bkj;
                    }
                }
            }
            out
        })
        .collect()
}

// lowest index wins ties
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// What fills the steps between agent actions.
#[derive(Clone, Debug, PartialEq)]
pub enum Beta {
    Default(DefaultPolicy),
    /// The undelayed optimal policy; inaction then costs nothing.
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pattern {
    delay: usize,
    steps_per_action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretReport {
    /// Horizon in agent decisions.
    pub t: usize,
    pub rollouts: usize,
    /// Mean return of the optimal policy on agent-action steps.
    pub g_opt: f64,
    /// Mean return of the evaluated policy on agent-action steps.
    pub g_pi: f64,
    /// Same two quantities on the β steps.
    pub g_opt_beta: f64,
    pub g_pi_beta: f64,
    pub delay_regret: f64,
    pub inaction_regret: f64,
    /// Regrets divided by `t`.
    pub delay_rate: f64,
    pub inaction_rate: f64,
    /// 95% half-widths of the per-decision rates.
    pub delay_ci: f64,
    pub inaction_ci: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    g_opt: f64,
    g_pi: f64,
    g_opt_beta: f64,
    g_pi_beta: f64,
}

fn rollout<E, F>(
    make_env: &F,
    policy: Option<&dyn DelayedPolicy>,
    beta: &Beta,
    pattern: Pattern,
    horizon: usize,
    seed: u64,
) -> Result<Tally, RegretError>
where
    E: KnownOptimal,
    F: Fn(u64) -> Result<E, EnvError> + Sync,
{
    let mut opt_env = make_env(seed)?;
    let mut pi_env = make_env(seed)?;
    let warmup = pattern.delay;
    let total = warmup + horizon * pattern.steps_per_action;
    if pi_env.spec().max_steps < total {
        return Err(RegretError::Config(format!(
            "{} episodes last {} steps, the rollout needs {total}",
            pi_env.spec().name,
            pi_env.spec().max_steps
        )));
    }
    opt_env.reset();
    let mut history = vec![pi_env.reset()];
    let optimal = |env: &E| {
        env.optimal_action().ok_or_else(|| RegretError::NoOracle(env.spec().name.clone()))
    };
    let mut last_action: Option<Action> = None;
    let mut tally = Tally::default();
    for i in 0..total {
        let a_opt = optimal(&opt_env)?;
        let counted = i >= warmup;
        let agent_step = !counted || (i - warmup) % pattern.steps_per_action == 0;
        let a_pi = if !counted {
            optimal(&pi_env)?
        } else if agent_step {
            match policy {
                Some(p) => p.act(&history[i - pattern.delay], pattern.delay),
                None => optimal(&pi_env)?,
            }
        } else {
            match beta {
                Beta::Optimal => optimal(&pi_env)?,
                Beta::Default(DefaultPolicy::FixedAction(a)) => a.clone(),
                Beta::Default(DefaultPolicy::RepeatLastAction) => {
                    last_action.clone().expect("an agent step precedes every β step")
                }
                Beta::Default(DefaultPolicy::Noop) => {
                    pi_env.spec().noop_action.clone().ok_or_else(|| {
                        RegretError::Config(format!("{} has no no-op action", pi_env.spec().name))
                    })?
                }
            }
        };
        let r_opt = opt_env.step(&a_opt)?.reward;
        let step = pi_env.step(&a_pi)?;
        history.push(step.obs);
        if counted {
            if agent_step {
                tally.g_opt += r_opt;
                tally.g_pi += step.reward;
            } else {
                tally.g_opt_beta += r_opt;
                tally.g_pi_beta += step.reward;
            }
        }
        if agent_step {
            last_action = Some(a_pi);
        }
    }
    Ok(tally)
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * var.sqrt() / n.sqrt())
}

fn run<E, F>(
    make_env: &F,
    policy: Option<&dyn DelayedPolicy>,
    beta: &Beta,
    pattern: Pattern,
    horizon: usize,
    rollouts: usize,
    seed: u64,
) -> Result<RegretReport, RegretError>
where
    E: KnownOptimal,
    F: Fn(u64) -> Result<E, EnvError> + Sync,
{
    if rollouts < MIN_ROLLOUTS {
        return Err(RegretError::Config(format!(
            "need at least {MIN_ROLLOUTS} rollouts, got {rollouts}"
        )));
    }
    if horizon == 0 {
        return Err(RegretError::Config("horizon must be positive".into()));
    }
    let root = RngStream::new(seed);
    let tallies = (0..rollouts as u64)
        .into_par_iter()
        .map(|r| rollout(make_env, policy, beta, pattern, horizon, root.child("regret", r).seed()))
        .collect::<Result<Vec<_>, _>>()?;
    let r = rollouts as f64;
    let t = horizon as f64;
    let avg = |f: fn(&Tally) -> f64| tallies.iter().map(f).sum::<f64>() / r;
    let delay: Vec<f64> = tallies.iter().map(|x| (x.g_opt - x.g_pi) / t).collect();
    let inaction: Vec<f64> = tallies.iter().map(|x| (x.g_opt_beta - x.g_pi_beta) / t).collect();
    let (delay_rate, delay_ci) = mean_ci(&delay);
    let (inaction_rate, inaction_ci) = mean_ci(&inaction);
    let g_opt = avg(|x| x.g_opt);
    let g_pi = avg(|x| x.g_pi);
    let g_opt_beta = avg(|x| x.g_opt_beta);
    let g_pi_beta = avg(|x| x.g_pi_beta);
    Ok(RegretReport {
        t: horizon,
        rollouts,
        g_opt,
        g_pi,
        g_opt_beta,
        g_pi_beta,
        delay_regret: g_opt - g_pi,
        inaction_regret: g_opt_beta - g_pi_beta,
        delay_rate,
        inaction_rate,
        delay_ci,
        inaction_ci,
    })
}

/// Regret of `policy` seeing observations `delay` steps late and acting on
/// every step. The first `delay` steps are played optimally and not counted.
pub fn delay_regret<E, F>(
    make_env: F,
    policy: &dyn DelayedPolicy,
    delay: usize,
    horizon: usize,
    rollouts: usize,
    seed: u64,
) -> Result<RegretReport, RegretError>
where
    E: KnownOptimal,
    F: Fn(u64) -> Result<E, EnvError> + Sync,
{
    let pattern = Pattern { delay, steps_per_action: 1 };
    run(&make_env, Some(policy), &Beta::Optimal, pattern, horizon, rollouts, seed)
}

/// Regret of letting `beta` act on the `delta − 1` steps between optimal
/// agent actions. `horizon` counts agent decisions, so a rollout spans
/// `horizon · delta` environment steps.
pub fn inaction_regret<E, F>(
    make_env: F,
    beta: &Beta,
    delta: usize,
    horizon: usize,
    rollouts: usize,
    seed: u64,
) -> Result<RegretReport, RegretError>
where
    E: KnownOptimal,
    F: Fn(u64) -> Result<E, EnvError> + Sync,
{
    if delta == 0 {
        return Err(RegretError::Config("delta must be at least 1".into()));
    }
    let pattern = Pattern { delay: 0, steps_per_action: delta };
    run(&make_env, None, beta, pattern, horizon, rollouts, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Plain chain of `N` layers: observations are `⌈N·δ⌉` steps old.
    Vanilla,
    /// Skip connection from observation to action: `⌈δ⌉` steps old.
    Skip,
}

impl PolicyKind {
    pub fn delay(self, depth: usize, delta: ExecTime) -> usize {
        match self {
            Self::Vanilla => (depth as u64 * delta.num()).div_ceil(delta.den()) as usize,
            Self::Skip => delta.ceil() as usize,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Skip => "skip",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub p: Vec<f64>,
    pub n_states: Vec<usize>,
    pub delta: Vec<ExecTime>,
    pub depth: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    /// Action index β repeats between agent actions.
    pub beta_action: usize,
    pub horizon: usize,
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p: vec![0.8],
            n_states: vec![64],
            delta: vec![ExecTime::integer(1)],
            depth: vec![1, 2, 3],
            policies: vec![PolicyKind::Vanilla, PolicyKind::Skip],
            beta_action: 0,
            horizon: 2000,
            rollouts: MIN_ROLLOUTS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub n_states: usize,
    pub delta: String,
    #[serde(rename = "N")]
    pub depth: usize,
    pub policy: &'static str,
    pub t: usize,
    pub delay_regret: f64,
    pub inaction_regret: f64,
    pub ci: f64,
}

/// One row per `(p, n_states, δ, N, policy)` on the worst-case chain. Every
/// cell reuses `cfg.seed`, so cells share their random draws. Regrets are
/// per agent decision; `ci` is the half-width of the delay regret.
pub fn regret_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, RegretError> {
    for (name, empty) in [
        ("p", cfg.p.is_empty()),
        ("n_states", cfg.n_states.is_empty()),
        ("delta", cfg.delta.is_empty()),
        ("depth", cfg.depth.is_empty()),
        ("policies", cfg.policies.is_empty()),
    ] {
        if empty {
            return Err(RegretError::Config(format!("sweep grid `{name}` is empty")));
        }
    }
    let mut rows = Vec::new();
    for &p in &cfg.p {
        for &n in &cfg.n_states {
            if cfg.beta_action >= n {
                return Err(RegretError::Config(format!(
                    "beta_action {} out of range for {n} states",
                    cfg.beta_action
                )));
            }
            let chain = WorstCase::new(n, p, 0)?;
            for &delta in &cfg.delta {
                let spa = delta.steps_per_tick() as usize;
                for &depth in &cfg.depth {
                    for &kind in &cfg.policies {
                        let delay = kind.delay(depth, delta);
                        let steps = delay + cfg.horizon * spa;
                        let make_env =
                            |s: u64| WorstCase::new(n, p, s).map(|e| e.with_max_steps(steps));
                        let policy = ModalSuccessor::for_worstcase(&chain, delay);
                        let beta =
                            Beta::Default(DefaultPolicy::FixedAction(Action::Discrete(cfg.beta_action)));
                        let pattern = Pattern { delay, steps_per_action: spa };
                        let rep = run(
                            &make_env,
                            Some(&policy),
                            &beta,
                            pattern,
                            cfg.horizon,
                            cfg.rollouts,
                            cfg.seed,
                        )?;
                        rows.push(SweepRow {
                            p,
                            n_states: n,
                            delta: delta.to_string(),
                            depth,
                            policy: kind.label(),
                            t: cfg.horizon,
                            delay_regret: rep.delay_rate,
                            inaction_regret: rep.inaction_rate,
                            ci: rep.delay_ci,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), RegretError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["p", "n_states", "delta", "N", "policy", "t", "delay_regret", "inaction_regret", "ci"])
        .map_err(|e| RegretError::Io(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| RegretError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| RegretError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modal_successor_follows_the_cycle() {
        let env = WorstCase::new(5, 0.9, 0).unwrap();
        let pol = ModalSuccessor::for_worstcase(&env, 3);
        let obs = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(pol.act(&obs, 0), Action::Discrete(2));
        assert_eq!(pol.act(&obs, 3), Action::Discrete(0));
    }

    #[test]
    fn vanilla_delay_rounds_up() {
        let d = ExecTime::new(2, 5).unwrap();
        assert_eq!(PolicyKind::Vanilla.delay(3, d), 2);
        assert_eq!(PolicyKind::Skip.delay(3, d), 1);
        assert_eq!(PolicyKind::Vanilla.delay(3, ExecTime::integer(2)), 6);
    }

    #[test]
    fn too_few_rollouts_rejected() {
        let env = WorstCase::new(4, 1.0, 0).unwrap();
        let pol = ModalSuccessor::for_worstcase(&env, 1);
        let err = delay_regret(|s| WorstCase::new(4, 1.0, s), &pol, 1, 10, 5, 0).unwrap_err();
        assert!(matches!(err, RegretError::Config(_)));
    }
}
