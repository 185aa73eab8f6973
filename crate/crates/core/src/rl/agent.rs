use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::envs::{Action, ActionSpace, Env, EnvSpec};
use crate::numerics::distributions::{
    categorical_mode, sample_categorical, squashed_gaussian_with_noise,
    standard_normal, traced_squashed_gaussian, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::numerics::{Ops, Rng, RngStream, Tape, Tensor, Var};
use crate::pipeline::{
    advance, advance_with, reset, reset_rows, reset_with, ActorState, EdgeMask, PipelineParams,
    PipelineTopology, ResetMode,
};

/// How head outputs become actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyHead {
    /// Head emits one logit per action.
    Categorical { n: usize },
    /// Head emits `[mean, raw_log_std]`, each `act_dim` wide; actions are
    /// `tanh` squashed then mapped affinely onto `[low, high]`.
    SquashedGaussian { act_dim: usize, low: f64, high: f64 },
}

impl PolicyHead {
    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => Self::Categorical { n: *n },
            ActionSpace::Box { dim, low, high } => {
                Self::SquashedGaussian { act_dim: *dim, low: *low, high: *high }
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Categorical { n } => *n,
            Self::SquashedGaussian { act_dim, .. } => 2 * act_dim,
        }
    }

    /// Encoded width of an action, as stored in transitions.
    pub fn action_dim(&self) -> usize {
        match self {
            Self::Categorical { n } => *n,
            Self::SquashedGaussian { act_dim, .. } => *act_dim,
        }
    }

    fn affine(&self) -> (f64, f64) {
        match self {
            Self::SquashedGaussian { low, high, .. } => ((high - low) / 2.0, (high + low) / 2.0),
            Self::Categorical { .. } => (1.0, 0.0),
        }
    }
}

/// Maps the raw log-std output smoothly into `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn log_std_from_raw(raw: &Tensor) -> Tensor {
    raw.map(|x| LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (x.tanh() + 1.0))
}

fn traced_log_std(tape: &mut Tape, raw: Var) -> Result<Var, RlError> {
    let t = tape.tanh(raw)?;
    let t = tape.add_scalar(t, 1.0)?;
    let t = tape.scale(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN))?;
    Ok(tape.add_scalar(t, LOG_STD_MIN)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    /// Distribution mode: `tanh(mean)` or the most likely action.
    MeanAction,
    Sample,
}

impl FromStr for ActMode {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_action" => Ok(Self::MeanAction),
            "sample" => Ok(Self::Sample),
            _ => Err(RlError::Config(format!("unknown action mode `{s}`"))),
        }
    }
}

/// Pipelined actor: topology, parameters, output head and hidden reset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub topology: PipelineTopology,
    pub params: PipelineParams,
    pub head: PolicyHead,
    pub reset: ResetMode,
}

/// Actions for a batch of rows plus their log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
}

impl Agent {
    pub fn new(
        topology: PipelineTopology,
        head: PolicyHead,
        reset: ResetMode,
        rng: &mut Rng,
    ) -> Result<Self, RlError> {
        if topology.head_dim() != head.output_dim() {
            return Err(RlError::Config(format!(
                "topology head emits {} values, policy head needs {}",
                topology.head_dim(),
                head.output_dim()
            )));
        }
        topology.validate()?;
        let params = PipelineParams::init(&topology, rng);
        Ok(Self { topology, params, head, reset })
    }

    pub fn check_env(&self, spec: &EnvSpec) -> Result<(), RlError> {
        if spec.obs_dim != self.topology.obs_dim {
            return Err(RlError::Config(format!(
                "environment `{}` observes {} values, actor expects {}",
                spec.name, spec.obs_dim, self.topology.obs_dim
            )));
        }
        if PolicyHead::for_space(&spec.action_space) != self.head {
            return Err(RlError::Config(format!(
                "actor head {:?} does not fit the action space of `{}`",
                self.head, spec.name
            )));
        }
        Ok(())
    }

    pub fn initial_state(&self, obs0: &Tensor) -> Result<ActorState, RlError> {
        Ok(reset(&self.topology, &self.params, obs0, self.reset)?)
    }

    /// One tick for every row of `obs`.
    pub fn step(
        &self,
        state: &ActorState,
        obs: &Tensor,
        mask: Option<&EdgeMask>,
        dropout_p: f64,
        rng: &mut Rng,
    ) -> Result<(Tensor, ActorState), RlError> {
        Ok(advance(&self.topology, &self.params, state, obs, mask, dropout_p, rng)?)
    }

    /// Converts head outputs into actions.
    pub fn decide(&self, out: &Tensor, mode: ActMode, rng: &mut Rng) -> Result<Decision, RlError> {
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let logp = out.log_softmax_rows()?;
                let idx = match mode {
                    ActMode::Sample => sample_categorical(out, rng)?.0,
                    ActMode::MeanAction => categorical_mode(out),
                };
                let log_probs = idx.iter().enumerate().map(|(r, a)| logp.get(r, *a)).collect();
                Ok(Decision { actions: idx.into_iter().map(Action::Discrete).collect(), log_probs })
            }
            PolicyHead::SquashedGaussian { act_dim, .. } => {
                let mean = out.slice_cols(0, *act_dim)?;
                let log_std = log_std_from_raw(&out.slice_cols(*act_dim, 2 * act_dim)?);
                let (squashed, lp) = match mode {
                    ActMode::Sample => {
                        let eps = standard_normal(mean.rows(), *act_dim, rng);
                        squashed_gaussian_with_noise(&mean, &log_std, &eps)?
                    }
                    // zero noise lands exactly on the mode, tanh(mean)
                    ActMode::MeanAction => {
                        let zero = Tensor::zeros(mean.rows(), *act_dim);
                        squashed_gaussian_with_noise(&mean, &log_std, &zero)?
                    }
                };
                let (scale, shift) = self.head.affine();
                let log_scale = *act_dim as f64 * scale.ln();
                let actions = (0..squashed.rows())
                    .map(|r| {
                        Action::Continuous(squashed.row_slice(r).iter().map(|a| a * scale + shift).collect())
                    })
                    .collect();
                Ok(Decision { actions, log_probs: lp.data().iter().map(|l| l - log_scale).collect() })
            }
        }
    }

    /// Reparameterised Gaussian action on the tape for fixed noise; returns
    /// the env-scaled action and its log-density, `[m, 1]`.
    pub(crate) fn traced_gaussian(
        &self,
        tape: &mut Tape,
        out: Var,
        eps: &Tensor,
    ) -> Result<(Var, Var), RlError> {
        let PolicyHead::SquashedGaussian { act_dim, .. } = self.head else {
            return Err(RlError::Config("gaussian head required".into()));
        };
        let mean = tape.slice_cols(out, 0, act_dim)?;
        let raw = tape.slice_cols(out, act_dim, 2 * act_dim)?;
        let log_std = traced_log_std(tape, raw)?;
        let (a, lp) = traced_squashed_gaussian(tape, mean, log_std, eps)?;
        let (scale, shift) = self.head.affine();
        let a = tape.scale(a, scale)?;
        let a = tape.add_scalar(a, shift)?;
        let lp = tape.add_scalar(lp, -(act_dim as f64) * scale.ln())?;
        Ok((a, lp))
    }
}

/// Runs the actor over `obs.len()` aligned ticks. Before tick `τ > 0`, rows
/// flagged in `resets[τ]` are re-initialised from `obs[τ]`; tick 0 always
/// starts from a fresh reset. Returns the head output of every tick.
pub fn unroll<O: Ops>(
    ops: &mut O,
    topo: &PipelineTopology,
    params: &PipelineParams<O::V>,
    mode: ResetMode,
    obs: &[O::V],
    resets: &[Vec<bool>],
) -> Result<Vec<O::V>, RlError> {
    if obs.is_empty() || resets.len() != obs.len() {
        return Err(RlError::Config(format!(
            "unroll needs one reset row per tick ({} obs, {} reset rows)",
            obs.len(),
            resets.len()
        )));
    }
    let mut state = reset_with(ops, topo, params, &obs[0], mode)?;
    let mut outs = Vec::with_capacity(obs.len());
    for (tau, o) in obs.iter().enumerate() {
        if tau > 0 {
            state = reset_rows(ops, topo, params, &state, o, &resets[tau], mode)?;
        }
        let (out, next) = advance_with(ops, topo, params, &state, o, None, None)?;
        outs.push(out);
        state = next;
    }
    Ok(outs)
}

/// Packs ragged sequences, aligned at their last element, into per-tick
/// `[rows, dim]` tensors. Rows shorter than the longest are padded at the
/// front with copies of their first observation and flagged for reset at
/// their own first tick.
pub fn pack_end_aligned(seqs: &[Vec<&[f64]>], dim: usize) -> Result<(Vec<Tensor>, Vec<Vec<bool>>), RlError> {
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    if len == 0 || seqs.iter().any(Vec::is_empty) {
        return Err(RlError::Config("cannot pack empty sequences".into()));
    }
    let mut obs = Vec::with_capacity(len);
    let mut resets = Vec::with_capacity(len);
    for tau in 0..len {
        let mut data = Vec::with_capacity(seqs.len() * dim);
        let mut flags = Vec::with_capacity(seqs.len());
        for s in seqs {
            let start = len - s.len();
            let row = s[tau.saturating_sub(start)];
            if row.len() != dim {
                return Err(RlError::Config(format!("observation width {} != {dim}", row.len())));
            }
            data.extend_from_slice(row);
            flags.push(tau == start);
        }
        obs.push(Tensor::new(vec![seqs.len(), dim], data)?);
        resets.push(flags);
    }
    Ok((obs, resets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let se = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se, returns }
    }
}

/// Undiscounted episodic return statistics. `env` must present the same
/// observations the actor was trained on (normally a `DelayedEnv`).
pub fn evaluate(
    env: &mut dyn Env,
    agent: &Agent,
    episodes: usize,
    mode: ActMode,
    dropout_p: f64,
    seed: u64,
) -> Result<EvalStats, RlError> {
    agent.check_env(env.spec())?;
    let stream = RngStream::new(seed);
    let mut act_rng = stream.substream("eval-actions");
    let mut drop_rng = stream.substream("eval-dropout");
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = Tensor::row(&env.reset());
        let mut state = agent.initial_state(&obs)?;
        let mut total = 0.0;
        loop {
            let (out, next) = agent.step(&state, &obs, None, dropout_p, &mut drop_rng)?;
            state = next;
            let d = agent.decide(&out, mode, &mut act_rng)?;
            let r = env.step(&d.actions[0])?;
            total += r.reward;
            if r.done() {
                break;
            }
            obs = Tensor::row(&r.obs);
        }
        returns.push(total);
    }
    Ok(EvalStats::from_returns(returns))
}
