//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng as _;
use rtpipe::numerics::{Rng, RngStream, Tape, Tensor, Var};
use rtpipe::pipeline::{
    advance, advance_with, reset, reset_with, Activation, EdgeKind, EdgeMask, ExecTime,
    PipelineParams, PipelineTopology, ResetMode, Variant,
};

/// Materialises every (node, tick) value of the unrolled graph by direct
/// recursion with naive loops. Tick -1 is the reset state.
pub struct DagUnroll<'a> {
    topo: &'a PipelineTopology,
    params: &'a PipelineParams,
    obs: &'a [Vec<Vec<f64>>],
    masked: Vec<bool>,
    mode: ResetMode,
    memo: HashMap<(usize, i64), Vec<Vec<f64>>>,
}

impl<'a> DagUnroll<'a> {
    pub fn new(
        topo: &'a PipelineTopology,
        params: &'a PipelineParams,
        obs: &'a [Vec<Vec<f64>>],
        mask: Option<&EdgeMask>,
        mode: ResetMode,
    ) -> Self {
        let masked = mask.map_or(vec![false; topo.edges.len()], |m| m.masked.clone());
        Self { topo, params, obs, masked, mode, memo: HashMap::new() }
    }

    fn rows(&self) -> usize {
        self.obs[0].len()
    }

    fn width(&self, node: usize) -> usize {
        if node == 0 {
            self.topo.obs_dim
        } else {
            self.topo.stages[node - 1].out_dim
        }
    }

    pub fn node(&mut self, j: usize, t: i64) -> Vec<Vec<f64>> {
        if let Some(v) = self.memo.get(&(j, t)) {
            return v.clone();
        }
        let rows = self.rows();
        let value = if t < 0 && (self.mode == ResetMode::Zeros || t < -1) {
            vec![vec![0.0; self.width(j)]; rows]
        } else if j == 0 {
            self.obs[t.max(0) as usize].clone()
        } else {
            let reset_tick = t == -1;
            let mut feeds: Vec<Vec<Vec<f64>>> = Vec::new();
            let mut residuals = Vec::new();
            let edges: Vec<(usize, _)> = self
                .topo
                .edges
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, e)| e.dst == j)
                .collect();
            for (idx, e) in edges {
                // the reset pass reads every edge within the same tick and ignores masks
                let masked = self.masked[idx] && !reset_tick;
                let read = if reset_tick || e.same_tick { t } else { t - 1 };
                let v = if masked {
                    vec![vec![0.0; self.width(e.src)]; rows]
                } else {
                    self.node(e.src, read)
                };
                match e.kind {
                    EdgeKind::Feed => feeds.push(v),
                    EdgeKind::Residual => residuals.push((masked, v)),
                }
            }
            let mut x: Vec<Vec<f64>> = (0..rows)
                .map(|r| feeds.iter().flat_map(|f| f[r].iter().copied()).collect())
                .collect();
            let stage = &self.params.stages[j - 1];
            for (l, dense) in stage.layers.iter().enumerate() {
                let (fan_in, fan_out) = (dense.w.shape()[0], dense.w.shape()[1]);
                let last = j == self.topo.stages.len() && l + 1 == stage.layers.len();
                x = x
                    .iter()
                    .map(|row| {
                        (0..fan_out)
                            .map(|c| {
                                let mut acc = dense.b.data()[c];
                                for i in 0..fan_in {
                                    acc += row[i] * dense.w.data()[i * fan_out + c];
                                }
                                if last {
                                    acc
                                } else {
                                    match self.topo.activation {
                                        Activation::Relu => acc.max(0.0),
                                        Activation::Tanh => acc.tanh(),
                                        Activation::Identity => acc,
                                    }
                                }
                            })
                            .collect()
                    })
                    .collect();
            }
            for ((masked, v), proj) in residuals.iter().zip(&stage.residual) {
                if *masked {
                    continue;
                }
                for r in 0..rows {
                    match proj {
                        Some(p) => {
                            let (pi, po) = (p.shape()[0], p.shape()[1]);
                            for c in 0..po {
                                x[r][c] += (0..pi).map(|i| v[r][i] * p.data()[i * po + c]).sum::<f64>();
                            }
                        }
                        None => {
                            for c in 0..x[r].len() {
                                x[r][c] += v[r][c];
                            }
                        }
                    }
                }
            }
            x
        };
        self.memo.insert((j, t), value.clone());
        value
    }

    pub fn actions(&mut self) -> Vec<Vec<Vec<f64>>> {
        let head = self.topo.stages.len();
        (0..self.obs.len() as i64).map(|t| self.node(head, t)).collect()
    }
}

pub fn to_tensor(m: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

/// Library actor on a stream; reset uses the first observation.
pub fn run_stream(
    topo: &PipelineTopology,
    params: &PipelineParams,
    obs: &[Tensor],
    mask: Option<&EdgeMask>,
    mode: ResetMode,
) -> Vec<Tensor> {
    let mut rng = RngStream::new(0).rng();
    let mut state = reset(topo, params, &obs[0], mode).unwrap();
    obs.iter()
        .map(|o| {
            let (a, next) = advance(topo, params, &state, o, mask, 0.0, &mut rng).unwrap();
            state = next;
            a
        })
        .collect()
}

pub const DELTAS: [&str; 5] = ["0.4", "1", "2", "3", "4"];

pub fn random_topology(rng: &mut Rng) -> PipelineTopology {
    let variant = Variant::BUILT_IN[rng.random_range(0..5)];
    let k = rng.random_range(1..=6);
    let delta: ExecTime = DELTAS[rng.random_range(0..5)].parse().unwrap();
    let obs_dim = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=5);
    let head = rng.random_range(1..=3);
    let act = [Activation::Relu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)];
    PipelineTopology::build(variant, k, delta, obs_dim, hidden, head)
        .unwrap()
        .with_activation(act)
}

pub fn random_obs(rng: &mut Rng, ticks: usize, rows: usize, dim: usize) -> Vec<Vec<Vec<f64>>> {
    (0..ticks)
        .map(|_| (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect())
        .collect()
}

pub fn max_abs(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.max_abs_diff(&to_tensor(b)).unwrap()
}

/// Loss `Σ_t Σ a_t ⊙ R_t` over a traced unroll from a zero reset.
fn traced_loss(
    topo: &PipelineTopology,
    params: &PipelineParams,
    obs: &[Tensor],
    weights: &[Tensor],
) -> (Tape, Var, PipelineParams<Var>) {
    let mut tape = Tape::new();
    let p = params.map(|t| tape.leaf(t.clone()));
    let o0 = tape.leaf(obs[0].clone());
    let mut state = reset_with(&mut tape, topo, &p, &o0, ResetMode::Zeros).unwrap();
    let mut terms = Vec::new();
    for (o, w) in obs.iter().zip(weights) {
        let ov = tape.leaf(o.clone());
        let (a, next) = advance_with(&mut tape, topo, &p, &state, &ov, None, None).unwrap();
        state = next;
        let wv = tape.leaf(w.clone());
        let prod = tape.mul(a, wv).unwrap();
        terms.push(tape.sum(prod).unwrap());
    }
    let mut loss = terms[0];
    for t in &terms[1..] {
        loss = tape.add(loss, *t).unwrap();
    }
    (tape, loss, p)
}

/// Relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between BPTT and central
/// differences over every parameter of a `ticks`-long unroll.
pub fn bptt_relative_error(topo: &PipelineTopology, seed: u64, ticks: usize) -> f64 {
    let mut rng = RngStream::new(seed).rng();
    let params = PipelineParams::init(topo, &mut rng);
    let obs: Vec<Tensor> =
        random_obs(&mut rng, ticks, 2, topo.obs_dim).iter().map(|m| to_tensor(m)).collect();
    let weights: Vec<Tensor> = random_obs(&mut rng, ticks, 2, topo.head_dim())
        .iter()
        .map(|m| to_tensor(m))
        .collect();
    let (tape, loss, vars) = traced_loss(topo, &params, &obs, &weights);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars.tensors().iter().flat_map(|v| grads.get(**v).into_data()).collect();

    let eval = |p: &PipelineParams| {
        let mut state = reset(topo, p, &obs[0], ResetMode::Zeros).unwrap();
        let mut rng = RngStream::new(0).rng();
        let mut total = 0.0;
        for (o, w) in obs.iter().zip(&weights) {
            let (a, next) = advance(topo, p, &state, o, None, 0.0, &mut rng).unwrap();
            state = next;
            total += a.mul(w).unwrap().sum();
        }
        total
    };
    let h = 1e-5;
    let n_tensors = params.tensors().len();
    let mut numeric = Vec::new();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[k] -= h;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// d-step hit rate of the modal guess on the worst-case chain, by walking
/// every length-`d` path from state 0.
pub fn modal_hit_probability(n: usize, p: f64, d: usize) -> f64 {
    fn walk(n: usize, p: f64, s: usize, left: usize, mass: f64, end: &mut [f64]) {
        if left == 0 {
            end[s] += mass;
            return;
        }
        let rest = (1.0 - p) / (n - 1) as f64;
        for t in 0..n {
            let q = if t == (s + 1) % n { p } else { rest };
            walk(n, p, t, left - 1, mass * q, end);
        }
    }
    let mut end = vec![0.0; n];
    walk(n, p, 0, d, 1.0, &mut end);
    end.into_iter().fold(0.0, f64::max)
}

/// Least-squares line through the origin; returns the slope and the usual
/// centred R².
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = sxy / sxx;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}

/// Spearman rank correlation without tie handling.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
