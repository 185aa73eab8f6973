use rand::Rng as _;

use super::agent::{log_std_from_raw, pack_end_aligned, unroll, ActMode};
use super::buffer::{ReplayBuffer, Transition};
use super::metrics::MetricsRow;
use super::mlp::Mlp;
use super::{non_finite, Agent, PolicyHead, RlError, TrainConfig, TrainOutput};
use crate::envs::{Action, AugmentedObs, DelayedEnv, Env};
use crate::numerics::distributions::{squashed_gaussian_with_noise, standard_normal};
use crate::numerics::{Adam, Eager, Rng, RngStream, Tape, Tensor};
use crate::pipeline::ActorState;

/// Soft actor-critic with a pipelined actor and undelayed twin critics.
///
/// Each agent tick feeds the delayed observation through the pipeline and
/// stores the undelayed transition. Critics train on uniform samples of
/// those transitions. The actor is re-simulated from zeroed buffers over the
/// `k + 1` ticks ending at a sampled transition and trained on the final
/// action by backpropagation through the whole window.
pub struct SacTrainer<E: Env> {
    env: DelayedEnv<E>,
    pub agent: Agent,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    log_alpha: f64,
    target_entropy: f64,
    cfg: TrainConfig,
    unroll: usize,
    act_dim: usize,
    low: f64,
    high: f64,
    buffer: ReplayBuffer,
    actor_opt: Adam,
    q_opt: Adam,
    alpha_opt: Adam,
    log_alpha_t: Tensor,
    act_rng: Rng,
    batch_rng: Rng,
    noise_rng: Rng,
    idle_rng: Rng,
    current: Option<(AugmentedObs, ActorState)>,
    episode: u64,
    episode_step: u64,
    episode_return: f64,
    env_steps: u64,
    ticks: u64,
    actor_loss: Option<f64>,
    critic_loss: Option<f64>,
    metrics: Vec<MetricsRow>,
}

impl<E: Env> SacTrainer<E> {
    pub fn new(env: DelayedEnv<E>, mut agent: Agent, cfg: TrainConfig, seed: u64) -> Result<Self, RlError> {
        cfg.validate()?;
        agent.check_env(env.spec())?;
        let PolicyHead::SquashedGaussian { act_dim, low, high } = agent.head else {
            return Err(RlError::Config("SAC needs a continuous action space".into()));
        };
        if let Some(mode) = cfg.reset {
            agent.reset = mode;
        }
        let k = cfg.unroll_len(&agent.topology)?;
        let stream = RngStream::new(seed);
        let mut critic_rng = stream.substream("sac-critic");
        let mut dims = vec![env.inner().spec().obs_dim + act_dim];
        dims.extend(&cfg.sac.critic_hidden);
        dims.push(1);
        let q1 = Mlp::init(&dims, &mut critic_rng);
        let q2 = Mlp::init(&dims, &mut critic_rng);
        let s = &cfg.sac;
        let log_alpha = s.alpha.ln();
        Ok(Self {
            env,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            agent,
            log_alpha,
            target_entropy: -s.target_entropy_scale * act_dim as f64,
            unroll: k,
            act_dim,
            low,
            high,
            buffer: ReplayBuffer::new(s.buffer_size),
            actor_opt: Adam::new(s.policy_lr, s.adam_eps),
            q_opt: Adam::new(s.q_lr, s.adam_eps),
            alpha_opt: Adam::new(s.q_lr, s.adam_eps),
            log_alpha_t: Tensor::scalar(log_alpha),
            act_rng: stream.substream("sac-actions"),
            batch_rng: stream.substream("sac-batches"),
            noise_rng: stream.substream("sac-noise"),
            idle_rng: stream.substream("sac-idle"),
            cfg,
            current: None,
            episode: 0,
            episode_step: 0,
            episode_return: 0.0,
            env_steps: 0,
            ticks: 0,
            actor_loss: None,
            critic_loss: None,
            metrics: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &DelayedEnv<E> {
        &self.env
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn unroll_len(&self) -> usize {
        self.unroll
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    /// One agent tick followed by the scheduled updates.
    pub fn tick(&mut self) -> Result<(), RlError> {
        let (aug, state) = match self.current.take() {
            Some(c) => c,
            None => {
                let aug = self.env.reset_augmented();
                let state = self.agent.initial_state(&Tensor::row(&aug.flatten()))?;
                self.episode_step = 0;
                self.episode_return = 0.0;
                (aug, state)
            }
        };
        let actor_obs = aug.flatten();
        let (out, next_state) =
            self.agent.step(&state, &Tensor::row(&actor_obs), None, 0.0, &mut self.idle_rng)?;
        let action = if (self.ticks as usize) < self.cfg.sac.learning_starts {
            Action::Continuous((0..self.act_dim).map(|_| self.act_rng.random_range(self.low..=self.high)).collect())
        } else {
            self.agent.decide(&out, ActMode::Sample, &mut self.act_rng)?.actions.remove(0)
        };
        let step = self.env.step_delayed(&action)?;
        self.env_steps += step.inner_rewards.len() as u64;
        self.buffer.push(Transition {
            obs: aug.obs.clone(),
            actor_obs,
            action: action.encode(&self.env.spec().action_space),
            reward: step.reward,
            next_obs: step.obs.obs.clone(),
            next_actor_obs: step.obs.flatten(),
            terminated: step.terminated,
            episode: self.episode,
            step: self.episode_step,
        });
        self.episode_step += 1;
        self.episode_return += step.reward;
        if step.terminated || step.truncated {
            self.metrics.push(MetricsRow {
                step: self.env_steps,
                episodic_return: Some(self.episode_return),
                actor_loss: self.actor_loss,
                critic_loss: self.critic_loss,
                entropy_coef: Some(self.alpha()),
            });
            self.episode += 1;
        } else {
            self.current = Some((step.obs, next_state));
        }
        self.ticks += 1;
        if self.ticks as usize >= self.cfg.sac.learning_starts.max(1) {
            self.update()?;
        }
        Ok(())
    }

    fn update(&mut self) -> Result<(), RlError> {
        let b = self.cfg.sac.batch_size;
        let idx = self.buffer.sample_indices(b, &mut self.batch_rng);
        let noise = standard_normal(b, self.act_dim, &mut self.noise_rng);
        let loss = self.critic_step(&idx, &noise)?;
        self.critic_loss = Some(loss);

        let freq = self.cfg.sac.policy_frequency as u64;
        if self.ticks % freq == 0 {
            for _ in 0..freq {
                let idx = self.buffer.sample_indices(b, &mut self.batch_rng);
                let noise = standard_normal(b, self.act_dim, &mut self.noise_rng);
                let (loss, grads, mean_logp) = self.actor_loss_grad(&idx, &noise)?;
                if !loss.is_finite() {
                    return Err(non_finite(self.env_steps, "actor loss"));
                }
                self.actor_opt.update(&mut self.agent.params.tensors_mut(), &grads)?;
                self.actor_loss = Some(loss);
                if self.cfg.sac.autotune {
                    let g = -self.alpha() * (mean_logp + self.target_entropy);
                    self.alpha_opt.update(&mut [&mut self.log_alpha_t], &[Tensor::scalar(g)])?;
                    self.log_alpha = self.log_alpha_t.item()?;
                }
            }
        }
        if self.ticks % self.cfg.sac.target_frequency as u64 == 0 {
            let tau = self.cfg.sac.tau;
            self.q1_target.polyak(&self.q1, tau);
            self.q2_target.polyak(&self.q2, tau);
        }
        Ok(())
    }

    fn windows(&self, idx: &[usize]) -> Vec<Vec<&Transition>> {
        idx.iter().map(|&i| self.buffer.window(i, self.unroll + 1)).collect()
    }

    /// Critic input `[s, a]` for the sampled transitions.
    fn critic_input(&self, batch: &[&Transition], next: bool) -> Result<Tensor, RlError> {
        let rows: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| {
                let mut r = if next { t.next_obs.clone() } else { t.obs.clone() };
                if !next {
                    r.extend_from_slice(&t.action);
                }
                r
            })
            .collect();
        Ok(Tensor::from_rows(&rows)?)
    }

    /// Bellman targets `r + γ(1 − done)(min Q̄(s', a') − α log π(a'))`, where
    /// `a'` comes from re-simulating the actor over the window ending one
    /// tick after each sampled transition. `noise` is `[batch, act_dim]`.
    pub fn critic_targets(&self, idx: &[usize], noise: &Tensor) -> Result<Vec<f64>, RlError> {
        let windows = self.windows(idx);
        let seqs: Vec<Vec<&[f64]>> = windows
            .iter()
            .map(|w| {
                let skip = usize::from(w.len() == self.unroll + 1);
                let mut s: Vec<&[f64]> = w[skip..].iter().map(|t| t.actor_obs.as_slice()).collect();
                s.push(&w[w.len() - 1].next_actor_obs);
                s
            })
            .collect();
        let (obs, resets) = pack_end_aligned(&seqs, self.agent.topology.obs_dim)?;
        let outs = unroll(&mut Eager, &self.agent.topology, &self.agent.params, self.agent.reset, &obs, &resets)?;
        let out = outs.last().expect("non-empty");
        let d = self.act_dim;
        let mean = out.slice_cols(0, d)?;
        let log_std = log_std_from_raw(&out.slice_cols(d, 2 * d)?);
        let (squashed, logp) = squashed_gaussian_with_noise(&mean, &log_std, noise)?;
        let (scale, shift) = ((self.high - self.low) / 2.0, (self.high + self.low) / 2.0);
        let next_action = squashed.map(|a| a * scale + shift);
        let logp = logp.map(|l| l - d as f64 * scale.ln());

        let last: Vec<&Transition> = windows.iter().map(|w| w[w.len() - 1]).collect();
        let next_state = self.critic_input(&last, true)?;
        let x = Tensor::concat_cols(&[&next_state, &next_action])?;
        let q1 = self.q1_target.forward(&mut Eager, &x)?;
        let q2 = self.q2_target.forward(&mut Eager, &x)?;
        let alpha = self.alpha();
        let gamma = self.cfg.gamma;
        Ok(last
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let live = if t.terminated { 0.0 } else { 1.0 };
                let soft = q1.get(r, 0).min(q2.get(r, 0)) - alpha * logp.get(r, 0);
                t.reward + gamma * live * soft
            })
            .collect())
    }

    fn critic_step(&mut self, idx: &[usize], noise: &Tensor) -> Result<f64, RlError> {
        let y = Tensor::column(&self.critic_targets(idx, noise)?);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let x = self.critic_input(&batch, false)?;
        let mut tape = Tape::new();
        let q1 = self.q1.map(|t| tape.leaf(t.clone()));
        let q2 = self.q2.map(|t| tape.leaf(t.clone()));
        let xv = tape.leaf(x);
        let yv = tape.leaf(y);
        let mut total = None;
        for q in [&q1, &q2] {
            let pred = q.forward(&mut tape, &xv)?;
            let diff = tape.sub(pred, yv)?;
            let sq = tape.square(diff)?;
            let m = tape.mean(sq)?;
            total = Some(match total {
                None => m,
                Some(acc) => tape.add(acc, m)?,
            });
        }
        let loss = total.expect("two critics");
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(non_finite(self.env_steps, "critic loss"));
        }
        let mut grads = tape.backward(loss)?;
        let g: Vec<Tensor> =
            q1.tensors().into_iter().chain(q2.tensors()).map(|v| grads.take(*v)).collect();
        let mut params = self.q1.tensors_mut();
        params.extend(self.q2.tensors_mut());
        self.q_opt.update(&mut params, &g)?;
        Ok(value)
    }

    /// Actor loss `mean(α log π(ã) − min Q(s, ã))` on the final tick of each
    /// window, its gradient with respect to every pipeline parameter, and
    /// the batch-mean log-density.
    pub fn actor_loss_grad(&self, idx: &[usize], noise: &Tensor) -> Result<(f64, Vec<Tensor>, f64), RlError> {
        let windows = self.windows(idx);
        let seqs: Vec<Vec<&[f64]>> =
            windows.iter().map(|w| w.iter().map(|t| t.actor_obs.as_slice()).collect()).collect();
        let (obs, resets) = pack_end_aligned(&seqs, self.agent.topology.obs_dim)?;
        let last: Vec<&Transition> = windows.iter().map(|w| w[w.len() - 1]).collect();
        let states: Vec<Vec<f64>> = last.iter().map(|t| t.obs.clone()).collect();

        let mut tape = Tape::new();
        let params = self.agent.params.map(|t| tape.leaf(t.clone()));
        let obs: Vec<_> = obs.into_iter().map(|o| tape.leaf(o)).collect();
        let outs = unroll(&mut tape, &self.agent.topology, &params, self.agent.reset, &obs, &resets)?;
        let (action, logp) = self.agent.traced_gaussian(&mut tape, *outs.last().expect("non-empty"), noise)?;
        let s = tape.leaf(Tensor::from_rows(&states)?);
        let x = tape.concat_cols(&[s, action])?;
        let q1 = self.q1.map(|t| tape.leaf(t.clone()));
        let q2 = self.q2.map(|t| tape.leaf(t.clone()));
        let v1 = q1.forward(&mut tape, &x)?;
        let v2 = q2.forward(&mut tape, &x)?;
        let qmin = tape.minimum(v1, v2)?;
        let scaled = tape.scale(logp, self.alpha())?;
        let per_row = tape.sub(scaled, qmin)?;
        let loss = tape.mean(per_row)?;
        let value = tape.value(loss).item()?;
        let mean_logp = tape.value(logp).sum() / idx.len() as f64;
        let mut grads = tape.backward(loss)?;
        let g = params.tensors().into_iter().map(|v| grads.take(*v)).collect();
        Ok((value, g, mean_logp))
    }

    /// Takes ticks until at least `total_steps` environment steps are used.
    pub fn train(&mut self, total_steps: u64) -> Result<(), RlError> {
        while self.env_steps < total_steps {
            self.tick()?;
        }
        Ok(())
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput { agent: self.agent, metrics: self.metrics, env_steps: self.env_steps }
    }
}

/// Trains `agent` on `env` for `total_steps` environment steps.
pub fn sac_train<E: Env>(
    env: DelayedEnv<E>,
    agent: Agent,
    cfg: &TrainConfig,
    total_steps: u64,
    seed: u64,
) -> Result<TrainOutput, RlError> {
    let mut t = SacTrainer::new(env, agent, cfg.clone(), seed)?;
    t.train(total_steps)?;
    Ok(t.into_output())
}
