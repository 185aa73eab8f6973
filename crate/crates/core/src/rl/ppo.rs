use rand::seq::SliceRandom;

use super::agent::{unroll, ActMode};
use super::gae::gae;
use super::metrics::MetricsRow;
use super::mlp::Mlp;
use super::{non_finite, Agent, PolicyHead, RlError, TrainConfig, TrainOutput};
use crate::envs::{AugmentedObs, DelayedEnv, Env};
use crate::numerics::distributions::traced_categorical_entropy;
use crate::numerics::{clip_global_norm, Adam, Eager, Rng, RngStream, Tape, Tensor, Var};
use crate::pipeline::{reset_rows, ActorState, ResetMode};

/// One rollout of `T` ticks over `n` environments, tick-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `[n, actor_obs_dim]` per tick.
    pub actor_obs: Vec<Tensor>,
    /// Rows whose episode starts at this tick. Tick 0 is all true: the
    /// re-simulation always starts from a fresh reset.
    pub resets: Vec<Vec<bool>>,
    /// `[n, obs_dim]` undelayed states per tick.
    pub critic_obs: Vec<Tensor>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminated: Vec<Vec<bool>>,
    pub truncated: Vec<Vec<bool>>,
    /// Final state of episodes cut by the time limit, for bootstrapping.
    pub truncation_obs: Vec<Vec<Option<Vec<f64>>>>,
    /// States after the last tick.
    pub last_critic_obs: Tensor,
}

impl Rollout {
    pub fn ticks(&self) -> usize {
        self.actor_obs.len()
    }

    pub fn rows(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }
}

/// A rollout with advantages, returns and behaviour log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rollout: Rollout,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub old_log_probs: Vec<Vec<f64>>,
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let parts: Vec<&[f64]> = rows.iter().map(|&r| t.row_slice(r)).collect();
    let data = parts.concat();
    Tensor::new(vec![rows.len(), t.cols()], data).expect("shape")
}

/// PPO with a pipelined actor and a separate undelayed MLP critic.
///
/// Rollouts carry the batched actor state across their boundaries. For each
/// update the actor is re-simulated over the whole rollout, starting from an
/// instantaneous reset (by default) at the first tick and re-initialising
/// rows at episode starts, and the clipped objective is backpropagated
/// through that unroll.
pub struct PpoTrainer<E: Env> {
    envs: Vec<DelayedEnv<E>>,
    pub agent: Agent,
    pub critic: Mlp,
    cfg: TrainConfig,
    opt: Adam,
    act_rng: Rng,
    shuffle_rng: Rng,
    idle_rng: Rng,
    obs: Vec<AugmentedObs>,
    state: Option<ActorState>,
    fresh: Vec<bool>,
    episode_returns: Vec<f64>,
    env_steps: u64,
    steps_per_tick: u64,
    actor_loss: Option<f64>,
    critic_loss: Option<f64>,
    metrics: Vec<MetricsRow>,
}

impl<E: Env> PpoTrainer<E> {
    pub fn new(envs: Vec<DelayedEnv<E>>, mut agent: Agent, cfg: TrainConfig, seed: u64) -> Result<Self, RlError> {
        cfg.validate()?;
        if envs.len() != cfg.ppo.n_envs {
            return Err(RlError::Config(format!(
                "{} environments given, ppo.n_envs is {}",
                envs.len(),
                cfg.ppo.n_envs
            )));
        }
        for e in &envs {
            agent.check_env(e.spec())?;
        }
        let PolicyHead::Categorical { .. } = agent.head else {
            return Err(RlError::Config("PPO needs a discrete action space".into()));
        };
        agent.reset = cfg.reset.unwrap_or(ResetMode::Instantaneous);
        let stream = RngStream::new(seed);
        let mut dims = vec![envs[0].inner().spec().obs_dim];
        dims.extend(&cfg.ppo.critic_hidden);
        dims.push(1);
        let critic = Mlp::init(&dims, &mut stream.substream("ppo-critic"));
        let mut envs = envs;
        let obs: Vec<AugmentedObs> = envs.iter_mut().map(|e| e.reset_augmented()).collect();
        let rows = envs.len();
        let steps_per_tick = envs[0].config().delay as u64;
        Ok(Self {
            envs,
            agent,
            critic,
            opt: Adam::new(cfg.ppo.lr, cfg.ppo.adam_eps),
            act_rng: stream.substream("ppo-actions"),
            shuffle_rng: stream.substream("ppo-shuffle"),
            idle_rng: stream.substream("ppo-idle"),
            cfg,
            obs,
            state: None,
            fresh: vec![true; rows],
            episode_returns: vec![0.0; rows],
            env_steps: 0,
            steps_per_tick,
            actor_loss: None,
            critic_loss: None,
            metrics: Vec::new(),
        })
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    fn actor_batch(&self) -> Result<Tensor, RlError> {
        let rows: Vec<Vec<f64>> = self.obs.iter().map(AugmentedObs::flatten).collect();
        Ok(Tensor::from_rows(&rows)?)
    }

    fn critic_batch(&self) -> Result<Tensor, RlError> {
        let rows: Vec<Vec<f64>> = self.obs.iter().map(|o| o.obs.clone()).collect();
        Ok(Tensor::from_rows(&rows)?)
    }

    /// Runs every environment for `rollout_len` ticks with sampled actions.
    pub fn collect(&mut self) -> Result<Rollout, RlError> {
        let n = self.envs.len();
        let t_len = self.cfg.ppo.rollout_len;
        let mut ro = Rollout {
            actor_obs: Vec::with_capacity(t_len),
            resets: Vec::with_capacity(t_len),
            critic_obs: Vec::with_capacity(t_len),
            actions: Vec::with_capacity(t_len),
            rewards: Vec::with_capacity(t_len),
            terminated: Vec::with_capacity(t_len),
            truncated: Vec::with_capacity(t_len),
            truncation_obs: Vec::with_capacity(t_len),
            last_critic_obs: Tensor::zeros(0, 0),
        };
        for t in 0..t_len {
            let obs = self.actor_batch()?;
            let state = match self.state.take() {
                None => self.agent.initial_state(&obs)?,
                Some(s) => reset_rows(
                    &mut Eager,
                    &self.agent.topology,
                    &self.agent.params,
                    &s,
                    &obs,
                    &self.fresh,
                    self.agent.reset,
                )?,
            };
            let mut flags = std::mem::replace(&mut self.fresh, vec![false; n]);
            if t == 0 {
                flags = vec![true; n];
            }
            ro.resets.push(flags);
            ro.critic_obs.push(self.critic_batch()?);
            let (out, next) = self.agent.step(&state, &obs, None, 0.0, &mut self.idle_rng)?;
            self.state = Some(next);
            let d = self.agent.decide(&out, ActMode::Sample, &mut self.act_rng)?;
            ro.actor_obs.push(obs);
            let mut acts = Vec::with_capacity(n);
            let (mut rews, mut terms, mut truncs, mut tobs) =
                (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for (i, a) in d.actions.iter().enumerate() {
                let s = self.envs[i].step_delayed(a)?;
                self.env_steps += s.inner_rewards.len() as u64;
                self.episode_returns[i] += s.reward;
                acts.push(a.discrete().expect("categorical head"));
                rews.push(s.reward);
                terms.push(s.terminated);
                truncs.push(s.truncated && !s.terminated);
                tobs.push((s.truncated && !s.terminated).then(|| s.obs.obs.clone()));
                if s.terminated || s.truncated {
                    self.metrics.push(MetricsRow {
                        step: self.env_steps,
                        episodic_return: Some(self.episode_returns[i]),
                        actor_loss: self.actor_loss,
                        critic_loss: self.critic_loss,
                        entropy_coef: None,
                    });
                    self.episode_returns[i] = 0.0;
                    self.obs[i] = self.envs[i].reset_augmented();
                    self.fresh[i] = true;
                } else {
                    self.obs[i] = s.obs;
                }
            }
            ro.actions.push(acts);
            ro.rewards.push(rews);
            ro.terminated.push(terms);
            ro.truncated.push(truncs);
            ro.truncation_obs.push(tobs);
        }
        ro.last_critic_obs = self.critic_batch()?;
        Ok(ro)
    }

    fn values(&self, obs: &Tensor) -> Result<Vec<f64>, RlError> {
        Ok(self.critic.forward(&mut Eager, obs)?.into_data())
    }

    /// Log-probabilities of the taken actions under the current actor,
    /// re-simulated exactly as the update does.
    pub fn log_probs(&self, ro: &Rollout) -> Result<Vec<Vec<f64>>, RlError> {
        let outs =
            unroll(&mut Eager, &self.agent.topology, &self.agent.params, self.agent.reset, &ro.actor_obs, &ro.resets)?;
        outs.iter()
            .zip(&ro.actions)
            .map(|(o, acts)| {
                let lp = o.log_softmax_rows()?;
                Ok(acts.iter().enumerate().map(|(r, a)| lp.get(r, *a)).collect())
            })
            .collect()
    }

    /// GAE per environment row, with time-limit truncations bootstrapped
    /// from the critic.
    pub fn prepare(&self, rollout: Rollout) -> Result<Batch, RlError> {
        let (t_len, n) = (rollout.ticks(), rollout.rows());
        let gamma = self.cfg.gamma;
        let values: Vec<Vec<f64>> =
            rollout.critic_obs.iter().map(|o| self.values(o)).collect::<Result<_, _>>()?;
        let last = self.values(&rollout.last_critic_obs)?;
        let mut advantages = vec![vec![0.0; n]; t_len];
        let mut returns = vec![vec![0.0; n]; t_len];
        for i in 0..n {
            let mut rewards = Vec::with_capacity(t_len);
            let mut dones = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mut r = rollout.rewards[t][i];
                if let Some(o) = &rollout.truncation_obs[t][i] {
                    r += gamma * self.values(&Tensor::row(o))?[0];
                }
                rewards.push(r);
                dones.push(rollout.terminated[t][i] || rollout.truncated[t][i]);
            }
            let v: Vec<f64> = (0..t_len).map(|t| values[t][i]).collect();
            let next: Vec<f64> =
                (0..t_len).map(|t| if t + 1 < t_len { values[t + 1][i] } else { last[i] }).collect();
            let (adv, ret) = gae(&rewards, &v, &next, &dones, gamma, self.cfg.ppo.gae_lambda)?;
            for t in 0..t_len {
                advantages[t][i] = adv[t];
                returns[t][i] = ret[t];
            }
        }
        let old_log_probs = self.log_probs(&rollout)?;
        Ok(Batch { rollout, advantages, returns, old_log_probs })
    }

    /// Clipped surrogate and mean entropy for the chosen rows, built on
    /// `tape` over actor parameter leaves `params`.
    fn policy_terms(
        &self,
        tape: &mut Tape,
        params: &crate::pipeline::PipelineParams<Var>,
        batch: &Batch,
        rows: &[usize],
        clip_eps: f64,
    ) -> Result<(Var, Var), RlError> {
        let ro = &batch.rollout;
        let obs: Vec<Var> = ro.actor_obs.iter().map(|o| tape.leaf(select_rows(o, rows))).collect();
        let resets: Vec<Vec<bool>> = ro.resets.iter().map(|f| rows.iter().map(|&r| f[r]).collect()).collect();
        let outs = unroll(tape, &self.agent.topology, params, self.agent.reset, &obs, &resets)?;

        let mut adv: Vec<f64> = Vec::with_capacity(ro.ticks() * rows.len());
        for a in &batch.advantages {
            adv.extend(rows.iter().map(|&r| a[r]));
        }
        if self.cfg.ppo.norm_adv && adv.len() > 1 {
            let m = adv.iter().sum::<f64>() / adv.len() as f64;
            let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (adv.len() - 1) as f64).sqrt();
            for a in adv.iter_mut() {
                *a = (*a - m) / (sd + 1e-8);
            }
        }
        let count = adv.len() as f64;
        let mut surrogate: Option<Var> = None;
        let mut entropy: Option<Var> = None;
        let acc = |tape: &mut Tape, slot: &mut Option<Var>, v: Var| -> Result<(), RlError> {
            *slot = Some(match *slot {
                None => v,
                Some(s) => tape.add(s, v)?,
            });
            Ok(())
        };
        for (t, out) in outs.iter().enumerate() {
            let logp_all = tape.log_softmax_rows(*out)?;
            let acts: Vec<usize> = rows.iter().map(|&r| ro.actions[t][r]).collect();
            let logp = tape.gather_cols(logp_all, &acts)?;
            let old: Vec<f64> = rows.iter().map(|&r| batch.old_log_probs[t][r]).collect();
            let old = tape.leaf(Tensor::column(&old));
            let diff = tape.sub(logp, old)?;
            let ratio = tape.exp(diff)?;
            let a = tape.leaf(Tensor::column(&adv[t * rows.len()..(t + 1) * rows.len()]));
            let unclipped = tape.mul(a, ratio)?;
            let clipped = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
            let clipped = tape.mul(a, clipped)?;
            let m = tape.minimum(unclipped, clipped)?;
            let s = tape.sum(m)?;
            acc(tape, &mut surrogate, s)?;
            let h = traced_categorical_entropy(tape, logp_all)?;
            let h = tape.sum(h)?;
            acc(tape, &mut entropy, h)?;
        }
        let pg = tape.scale(surrogate.expect("ticks"), -1.0 / count)?;
        let ent = tape.scale(entropy.expect("ticks"), 1.0 / count)?;
        Ok((pg, ent))
    }

    /// Gradient of the clipped policy surrogate alone (no entropy or value
    /// terms) over the chosen rows.
    pub fn surrogate_grad(&self, batch: &Batch, rows: &[usize], clip_eps: f64) -> Result<(f64, Vec<Tensor>), RlError> {
        let mut tape = Tape::new();
        let params = self.agent.params.map(|t| tape.leaf(t.clone()));
        let (pg, _) = self.policy_terms(&mut tape, &params, batch, rows, clip_eps)?;
        let value = tape.value(pg).item()?;
        let mut grads = tape.backward(pg)?;
        Ok((value, params.tensors().into_iter().map(|v| grads.take(*v)).collect()))
    }

    fn minibatch_step(&mut self, batch: &Batch, rows: &[usize]) -> Result<(f64, f64), RlError> {
        let p = &self.cfg.ppo;
        let mut tape = Tape::new();
        let params = self.agent.params.map(|t| tape.leaf(t.clone()));
        let critic = self.critic.map(|t| tape.leaf(t.clone()));
        let (pg, ent) = self.policy_terms(&mut tape, &params, batch, rows, p.clip_eps)?;

        let ro = &batch.rollout;
        let parts: Vec<Tensor> = ro.critic_obs.iter().map(|s| select_rows(s, rows)).collect();
        let stacked = Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())?;
        let targets: Vec<f64> = batch.returns.iter().flat_map(|r| rows.iter().map(|&i| r[i])).collect();
        let x = tape.leaf(stacked);
        let v = critic.forward(&mut tape, &x)?;
        let y = tape.leaf(Tensor::column(&targets));
        let diff = tape.sub(v, y)?;
        let sq = tape.square(diff)?;
        let v_loss = tape.mean(sq)?;
        let v_loss = tape.scale(v_loss, 0.5)?;

        let ent_term = tape.scale(ent, -p.ent_coef)?;
        let v_term = tape.scale(v_loss, p.vf_coef)?;
        let loss = tape.add(pg, ent_term)?;
        let loss = tape.add(loss, v_term)?;
        let pg_value = tape.value(pg).item()?;
        let v_value = tape.value(v_loss).item()?;
        if !tape.value(loss).item()?.is_finite() {
            return Err(non_finite(self.env_steps, "ppo loss"));
        }
        let mut grads = tape.backward(loss)?;
        let mut g: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .chain(critic.tensors())
            .map(|v| grads.take(*v))
            .collect();
        clip_global_norm(&mut g, p.max_grad_norm);
        let mut all = self.agent.params.tensors_mut();
        all.extend(self.critic.tensors_mut());
        self.opt.update(&mut all, &g)?;
        Ok((pg_value, v_value))
    }

    /// `epochs` passes over the batch in shuffled row minibatches.
    pub fn update(&mut self, batch: &Batch) -> Result<(), RlError> {
        let n = batch.rollout.rows();
        let per = n / self.cfg.ppo.minibatches;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.cfg.ppo.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(per) {
                let (pg, v) = self.minibatch_step(batch, chunk)?;
                self.actor_loss = Some(pg);
                self.critic_loss = Some(v);
            }
        }
        Ok(())
    }

    /// Runs `ceil(total_steps / (n_envs · rollout_len · delay))` iterations.
    pub fn train(&mut self, total_steps: u64) -> Result<(), RlError> {
        let per_iter = (self.cfg.ppo.n_envs * self.cfg.ppo.rollout_len) as u64 * self.steps_per_tick;
        let iters = total_steps.div_ceil(per_iter);
        for it in 0..iters {
            if self.cfg.ppo.anneal_lr {
                self.opt.lr = self.cfg.ppo.lr * (1.0 - it as f64 / iters as f64);
            }
            let ro = self.collect()?;
            let batch = self.prepare(ro)?;
            self.update(&batch)?;
        }
        Ok(())
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput { agent: self.agent, metrics: self.metrics, env_steps: self.env_steps }
    }
}

/// Trains `agent` on the environment set for `total_steps` environment steps.
pub fn ppo_train<E: Env>(
    envs: Vec<DelayedEnv<E>>,
    agent: Agent,
    cfg: &TrainConfig,
    total_steps: u64,
    seed: u64,
) -> Result<TrainOutput, RlError> {
    let mut t = PpoTrainer::new(envs, agent, cfg.clone(), seed)?;
    t.train(total_steps)?;
    Ok(t.into_output())
}
