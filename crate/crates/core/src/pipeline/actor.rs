use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::PipelineParams;
use super::topology::{Activation, EdgeKind, PipelineTopology};
use super::PipelineError;
use crate::numerics::{Eager, Ops, Rng, Tensor};

/// Buffered outputs carried between ticks; `buffers[0]` is the observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorState<T = Tensor> {
    pub buffers: Vec<T>,
    pub tick: u64,
}

impl<T> ActorState<T> {
    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ActorState<U> {
        ActorState { buffers: self.buffers.iter().map(f).collect(), tick: self.tick }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Zeros,
    /// Buffers hold `obs0` pushed through every stage within one step.
    Instantaneous,
}

impl FromStr for ResetMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeros" => Ok(Self::Zeros),
            "instantaneous" => Ok(Self::Instantaneous),
            _ => Err(PipelineError::Config(format!("unknown reset mode `{s}`"))),
        }
    }
}

/// Edges removed at advance time; aligned with `PipelineTopology::edges`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeMask {
    pub masked: Vec<bool>,
}

impl EdgeMask {
    pub fn none(topo: &PipelineTopology) -> Self {
        Self { masked: vec![false; topo.edges.len()] }
    }

    pub fn union(&self, other: &Self) -> Result<Self, PipelineError> {
        if self.masked.len() != other.masked.len() {
            return Err(PipelineError::Mask("masks belong to different topologies".into()));
        }
        Ok(Self { masked: self.masked.iter().zip(&other.masked).map(|(a, b)| *a || *b).collect() })
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }
}

/// Resolves a connection group name to an edge mask.
///
/// Groups: `from_obs` (skip edges leaving the observation), `from_stage_<j>`
/// (skip edges leaving stage `j`), `last_stage_to_head`, `all`, and
/// `edge:<src>-><dst>`. Chain edges `j-1 -> j` are only reachable through
/// `last_stage_to_head`, `all` and `edge:`.
pub fn mask_connections(topo: &PipelineTopology, group: &str) -> Result<EdgeMask, PipelineError> {
    let is_chain = |src: usize, dst: usize, kind: EdgeKind| kind == EdgeKind::Feed && src + 1 == dst;
    let head = topo.head();
    let select: Box<dyn Fn(usize, usize, EdgeKind) -> bool> = match group {
        "all" => Box::new(|_, _, _| true),
        "from_obs" => Box::new(move |s, d, k| s == 0 && !is_chain(s, d, k)),
        "last_stage_to_head" => Box::new(move |s, d, k| d == head && s + 1 == head && is_chain(s, d, k)),
        g => {
            if let Some(j) = g.strip_prefix("from_stage_") {
                let j: usize = j
                    .parse()
                    .map_err(|_| PipelineError::Mask(format!("unknown connection group `{g}`")))?;
                Box::new(move |s, d, k| s == j && !is_chain(s, d, k))
            } else if let Some(spec) = g.strip_prefix("edge:") {
                let parsed = spec
                    .split_once("->")
                    .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
                let (src, dst): (usize, usize) = parsed
                    .ok_or_else(|| PipelineError::Mask(format!("malformed edge group `{g}`")))?;
                Box::new(move |s, d, _| s == src && d == dst)
            } else {
                return Err(PipelineError::Mask(format!("unknown connection group `{g}`")));
            }
        }
    };
    let masked: Vec<bool> = topo.edges.iter().map(|e| select(e.src, e.dst, e.kind)).collect();
    if !masked.iter().any(|m| *m) {
        return Err(PipelineError::Mask(format!(
            "group `{group}` selects no edge of this {} topology",
            topo.variant.name()
        )));
    }
    Ok(EdgeMask { masked })
}

/// Per-tick inverted-dropout multipliers for hidden buffers (`1..S-1`).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    masks: Vec<Option<Tensor>>,
}

impl DropoutMasks {
    /// `None` when `p == 0`, so the no-dropout path draws nothing from `rng`.
    pub fn sample(
        topo: &PipelineTopology,
        rows: usize,
        p: f64,
        rng: &mut Rng,
    ) -> Result<Option<Self>, PipelineError> {
        if !(0.0..1.0).contains(&p) {
            return Err(PipelineError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(None);
        }
        let keep = 1.0 / (1.0 - p);
        let masks = (0..topo.head())
            .map(|node| {
                (node > 0).then(|| {
                    let n = rows * topo.node_dim(node);
                    let data = (0..n)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    Tensor::new(vec![rows, topo.node_dim(node)], data).expect("shape")
                })
            })
            .collect();
        Ok(Some(Self { masks }))
    }

    pub fn get(&self, node: usize) -> Option<&Tensor> {
        self.masks.get(node).and_then(Option::as_ref)
    }
}

fn activate<O: Ops>(ops: &mut O, act: Activation, x: &O::V) -> Result<O::V, PipelineError> {
    Ok(match act {
        Activation::Relu => ops.relu(x)?,
        Activation::Tanh => ops.tanh(x)?,
        Activation::Identity => x.clone(),
    })
}

/// Runs stage `j` on the values its incoming edges deliver (`None` = masked).
fn compute_stage<O: Ops>(
    ops: &mut O,
    topo: &PipelineTopology,
    params: &PipelineParams<O::V>,
    j: usize,
    rows: usize,
    inputs: &[(EdgeKind, usize, Option<O::V>)],
) -> Result<O::V, PipelineError> {
    let mut feeds = Vec::new();
    for (kind, src, v) in inputs {
        if *kind == EdgeKind::Feed {
            feeds.push(match v {
                Some(v) => v.clone(),
                None => ops.constant(Tensor::zeros(rows, topo.node_dim(*src))),
            });
        }
    }
    let mut x = if feeds.len() == 1 { feeds.pop().expect("one") } else { ops.concat_cols(&feeds)? };
    let stage = &params.stages[j - 1];
    let n_layers = stage.layers.len();
    for (l, dense) in stage.layers.iter().enumerate() {
        let z = ops.matmul(&x, &dense.w)?;
        let z = ops.add_row(&z, &dense.b)?;
        x = if j == topo.head() && l + 1 == n_layers { z } else { activate(ops, topo.activation, &z)? };
    }
    let residuals = inputs.iter().filter(|(k, _, _)| *k == EdgeKind::Residual);
    for ((_, _, v), proj) in residuals.zip(&stage.residual) {
        let Some(v) = v else { continue };
        let r = match proj {
            Some(p) => ops.matmul(v, p)?,
            None => v.clone(),
        };
        x = ops.add(&x, &r)?;
    }
    Ok(x)
}

fn check_obs(topo: &PipelineTopology, obs: &Tensor) -> Result<usize, PipelineError> {
    if obs.shape().len() != 2 || obs.cols() != topo.obs_dim {
        return Err(PipelineError::Shape(format!(
            "observation {:?} does not have {} columns",
            obs.shape(),
            topo.obs_dim
        )));
    }
    Ok(obs.rows())
}

/// One tick on any backend. Returns the head output and the next state.
pub fn advance_with<O: Ops>(
    ops: &mut O,
    topo: &PipelineTopology,
    params: &PipelineParams<O::V>,
    state: &ActorState<O::V>,
    obs: &O::V,
    mask: Option<&EdgeMask>,
    dropout: Option<&DropoutMasks>,
) -> Result<(O::V, ActorState<O::V>), PipelineError> {
    let rows = check_obs(topo, ops.value(obs))?;
    let s = topo.head();
    if state.buffers.len() != s + 1 {
        return Err(PipelineError::Shape(format!(
            "state has {} buffers, topology needs {}",
            state.buffers.len(),
            s + 1
        )));
    }
    for (node, b) in state.buffers.iter().enumerate() {
        let t = ops.value(b);
        if t.shape() != [rows, topo.node_dim(node)] {
            return Err(PipelineError::Shape(format!(
                "buffer {node} is {:?}, expected [{rows}, {}]",
                t.shape(),
                topo.node_dim(node)
            )));
        }
    }
    if let Some(m) = mask {
        if m.masked.len() != topo.edges.len() {
            return Err(PipelineError::Mask(format!(
                "mask covers {} edges, topology has {}",
                m.masked.len(),
                topo.edges.len()
            )));
        }
    }

    // dropout multiplies each hidden buffer once, whichever edge reads it
    let mut dropped_prev: Vec<Option<O::V>> = vec![None; s + 1];
    let mut fresh: Vec<O::V> = Vec::with_capacity(s + 1);
    fresh.push(obs.clone());
    for j in 1..=s {
        let mut inputs = Vec::new();
        for (idx, e) in topo.incoming(j) {
            if mask.is_some_and(|m| m.masked[idx]) {
                inputs.push((e.kind, e.src, None));
                continue;
            }
            let drop = dropout.and_then(|d| d.get(e.src));
            let v = if e.same_tick {
                match drop {
                    Some(d) => {
                        let d = ops.constant(d.clone());
                        ops.mul(&fresh[e.src], &d)?
                    }
                    None => fresh[e.src].clone(),
                }
            } else {
                match drop {
                    Some(d) => {
                        if dropped_prev[e.src].is_none() {
                            let d = ops.constant(d.clone());
                            dropped_prev[e.src] = Some(ops.mul(&state.buffers[e.src], &d)?);
                        }
                        dropped_prev[e.src].clone().expect("set above")
                    }
                    None => state.buffers[e.src].clone(),
                }
            };
            inputs.push((e.kind, e.src, Some(v)));
        }
        let out = compute_stage(ops, topo, params, j, rows, &inputs)?;
        fresh.push(out);
    }
    let action = fresh[s].clone();
    Ok((action, ActorState { buffers: fresh, tick: state.tick + 1 }))
}

/// Initial state on any backend.
pub fn reset_with<O: Ops>(
    ops: &mut O,
    topo: &PipelineTopology,
    params: &PipelineParams<O::V>,
    obs0: &O::V,
    mode: ResetMode,
) -> Result<ActorState<O::V>, PipelineError> {
    let rows = check_obs(topo, ops.value(obs0))?;
    let buffers = match mode {
        ResetMode::Zeros => (0..=topo.head())
            .map(|node| ops.constant(Tensor::zeros(rows, topo.node_dim(node))))
            .collect(),
        ResetMode::Instantaneous => {
            let mut fresh = vec![obs0.clone()];
            for j in 1..=topo.head() {
                let inputs: Vec<_> = topo
                    .incoming(j)
                    .map(|(_, e)| (e.kind, e.src, Some(fresh[e.src].clone())))
                    .collect();
                let out = compute_stage(ops, topo, params, j, rows, &inputs)?;
                fresh.push(out);
            }
            fresh
        }
    };
    Ok(ActorState { buffers, tick: 0 })
}

/// Resets only the rows flagged in `rows_to_reset`, leaving the others intact.
pub fn reset_rows<O: Ops>(
    ops: &mut O,
    topo: &PipelineTopology,
    params: &PipelineParams<O::V>,
    state: &ActorState<O::V>,
    obs0: &O::V,
    rows_to_reset: &[bool],
    mode: ResetMode,
) -> Result<ActorState<O::V>, PipelineError> {
    let rows = check_obs(topo, ops.value(obs0))?;
    if rows_to_reset.len() != rows {
        return Err(PipelineError::Shape(format!(
            "{} reset flags for {rows} rows",
            rows_to_reset.len()
        )));
    }
    if !rows_to_reset.iter().any(|r| *r) {
        return Ok(state.clone());
    }
    let fresh = reset_with(ops, topo, params, obs0, mode)?;
    if rows_to_reset.iter().all(|r| *r) {
        return Ok(ActorState { buffers: fresh.buffers, tick: state.tick });
    }
    let mut buffers = Vec::with_capacity(state.buffers.len());
    for (node, (old, new)) in state.buffers.iter().zip(&fresh.buffers).enumerate() {
        let width = topo.node_dim(node);
        let flag = |on: bool| {
            let data = rows_to_reset
                .iter()
                .flat_map(|r| std::iter::repeat_n(if *r == on { 1.0 } else { 0.0 }, width))
                .collect();
            Tensor::new(vec![rows, width], data).expect("shape")
        };
        let keep = ops.constant(flag(false));
        let take = ops.constant(flag(true));
        let a = ops.mul(old, &keep)?;
        let b = ops.mul(new, &take)?;
        buffers.push(ops.add(&a, &b)?);
    }
    Ok(ActorState { buffers, tick: state.tick })
}

/// One eager tick with optional edge mask and inverted dropout on hidden
/// buffers. `dropout_p == 0` consumes no randomness.
pub fn advance(
    topo: &PipelineTopology,
    params: &PipelineParams,
    state: &ActorState,
    obs: &Tensor,
    mask: Option<&EdgeMask>,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<(Tensor, ActorState), PipelineError> {
    let drop = DropoutMasks::sample(topo, obs.rows(), dropout_p, rng)?;
    advance_with(&mut Eager, topo, params, state, obs, mask, drop.as_ref())
}

pub fn reset(
    topo: &PipelineTopology,
    params: &PipelineParams,
    obs0: &Tensor,
    mode: ResetMode,
) -> Result<ActorState, PipelineError> {
    reset_with(&mut Eager, topo, params, obs0, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::pipeline::{ExecTime, Variant};

    fn scalar_topo(variant: Variant, k: usize) -> PipelineTopology {
        PipelineTopology::build(variant, k, ExecTime::integer(1), 1, 1, 1).unwrap()
    }

    fn run(topo: &PipelineTopology, stream: &[f64]) -> Vec<f64> {
        let params = PipelineParams::identity(topo).unwrap();
        let mut rng = RngStream::new(0).rng();
        let mut state = reset(topo, &params, &Tensor::row(&[0.0]), ResetMode::Zeros).unwrap();
        stream
            .iter()
            .map(|&o| {
                let (a, next) =
                    advance(topo, &params, &state, &Tensor::row(&[o]), None, 0.0, &mut rng).unwrap();
                state = next;
                a.item().unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_chain_delays_by_depth() {
        assert_eq!(run(&scalar_topo(Variant::Vanilla, 2), &[1.0, 2.0, 3.0, 4.0]), [0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn obs_skip_sums_two_delays() {
        assert_eq!(
            run(&scalar_topo(Variant::ProjToAction, 2), &[1.0, 2.0, 3.0, 4.0]),
            [0.0, 1.0, 3.0, 5.0]
        );
    }

    #[test]
    fn resets() {
        let topo = scalar_topo(Variant::Vanilla, 3);
        let params = PipelineParams::identity(&topo).unwrap();
        let obs = Tensor::row(&[5.0]);
        let z = reset(&topo, &params, &obs, ResetMode::Zeros).unwrap();
        assert!(z.buffers.iter().all(|b| b.data() == [0.0]));
        let i = reset(&topo, &params, &obs, ResetMode::Instantaneous).unwrap();
        assert!(i.buffers.iter().all(|b| b.data() == [5.0]));
    }

    #[test]
    fn mask_groups() {
        let topo = scalar_topo(Variant::ProjToAction, 3);
        assert_eq!(mask_connections(&topo, "from_obs").unwrap().count(), 1);
        assert_eq!(mask_connections(&topo, "from_stage_1").unwrap().count(), 1);
        assert_eq!(mask_connections(&topo, "last_stage_to_head").unwrap().count(), 1);
        assert_eq!(mask_connections(&topo, "all").unwrap().count(), topo.edges.len());
        assert_eq!(mask_connections(&topo, "edge:0->1").unwrap().count(), 1);
        assert!(mask_connections(&topo, "bogus").is_err());
        assert!(mask_connections(&scalar_topo(Variant::Vanilla, 3), "from_obs").is_err());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let topo = scalar_topo(Variant::Vanilla, 2);
        let params = PipelineParams::identity(&topo).unwrap();
        let obs = Tensor::row(&[1.0]);
        let state = reset(&topo, &params, &obs, ResetMode::Zeros).unwrap();
        let bad = EdgeMask { masked: vec![true; 7] };
        let mut rng = RngStream::new(0).rng();
        assert!(matches!(
            advance(&topo, &params, &state, &obs, Some(&bad), 0.0, &mut rng),
            Err(PipelineError::Mask(_))
        ));
        assert!(matches!(
            advance(&topo, &params, &state, &Tensor::row(&[1.0, 2.0]), None, 0.0, &mut rng),
            Err(PipelineError::Shape(_))
        ));
    }

    #[test]
    fn partial_row_reset() {
        let topo = scalar_topo(Variant::Vanilla, 2);
        let params = PipelineParams::identity(&topo).unwrap();
        let obs = Tensor::column(&[3.0, 4.0]);
        let mut ops = Eager;
        let state = ActorState {
            buffers: vec![Tensor::column(&[1.0, 1.0]); 3],
            tick: 4,
        };
        let out = reset_rows(&mut ops, &topo, &params, &state, &obs, &[false, true], ResetMode::Instantaneous)
            .unwrap();
        for b in &out.buffers {
            assert_eq!(b.data(), &[1.0, 4.0]);
        }
        assert_eq!(out.tick, 4);
    }
}
