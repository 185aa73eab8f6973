use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::topology::{EdgeKind, PipelineTopology};
use super::PipelineError;
use crate::numerics::{Rng, Tensor};

/// `x·w + b` with `w: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T = Tensor> {
    pub w: T,
    pub b: T,
}

impl Dense<Tensor> {
    /// Uniform in ±1/√fan_in for both weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Self {
            w: Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("shape"),
            b: Tensor::new(vec![1, fan_out], draw(fan_out)).expect("shape"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageParams<T = Tensor> {
    pub layers: Vec<Dense<T>>,
    /// One slot per residual edge into the stage, in edge order; a projection
    /// matrix when the source width differs from the stage output.
    pub residual: Vec<Option<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams<T = Tensor> {
    pub stages: Vec<StageParams<T>>,
}

impl<T> PipelineParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PipelineParams<U> {
        PipelineParams {
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    layers: s.layers.iter().map(|d| Dense { w: f(&d.w), b: f(&d.b) }).collect(),
                    residual: s.residual.iter().map(|r| r.as_ref().map(&mut f)).collect(),
                })
                .collect(),
        }
    }

    /// Every parameter in a fixed order shared with [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for s in &self.stages {
            for d in &s.layers {
                out.push(&d.w);
                out.push(&d.b);
            }
            out.extend(s.residual.iter().flatten());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            for d in &mut s.layers {
                out.push(&mut d.w);
                out.push(&mut d.b);
            }
            out.extend(s.residual.iter_mut().flatten());
        }
        out
    }
}

fn layer_dims(topo: &PipelineTopology, j: usize) -> Vec<(usize, usize)> {
    let spec = topo.stages[j - 1];
    let mut dims = Vec::with_capacity(spec.layers);
    let mut fan_in = topo.stage_input_dim(j);
    for l in 0..spec.layers {
        let fan_out = if l + 1 == spec.layers { spec.out_dim } else { spec.hidden_dim };
        dims.push((fan_in, fan_out));
        fan_in = fan_out;
    }
    dims
}

fn residual_dims(topo: &PipelineTopology, j: usize) -> Vec<Option<(usize, usize)>> {
    let out = topo.node_dim(j);
    topo.incoming(j)
        .filter(|(_, e)| e.kind == EdgeKind::Residual)
        .map(|(_, e)| {
            let src = topo.node_dim(e.src);
            (src != out).then_some((src, out))
        })
        .collect()
}

impl PipelineParams<Tensor> {
    pub fn init(topo: &PipelineTopology, rng: &mut Rng) -> Self {
        let stages = (1..=topo.n_stages())
            .map(|j| StageParams {
                layers: layer_dims(topo, j)
                    .into_iter()
                    .map(|(i, o)| Dense::init(i, o, rng))
                    .collect(),
                residual: residual_dims(topo, j)
                    .into_iter()
                    .map(|d| d.map(|(i, o)| Dense::init(i, o, rng).w))
                    .collect(),
            })
            .collect();
        Self { stages }
    }

    /// Identity layers with zero bias: every stage outputs the sum of its
    /// inputs. Needs all nodes to share one width.
    pub fn identity(topo: &PipelineTopology) -> Result<Self, PipelineError> {
        let w = topo.obs_dim;
        let uniform = (1..=topo.n_stages())
            .all(|j| topo.node_dim(j) == w && topo.stages[j - 1].hidden_dim == w);
        if !uniform {
            return Err(PipelineError::Config("identity params need equal widths".into()));
        }
        let stages = (1..=topo.n_stages())
            .map(|j| {
                let layers = layer_dims(topo, j)
                    .into_iter()
                    .map(|(fan_in, fan_out)| {
                        let blocks = fan_in / fan_out;
                        let eye = Tensor::identity(fan_out);
                        let refs: Vec<&Tensor> = (0..blocks).map(|_| &eye).collect();
                        Dense {
                            w: Tensor::stack_rows(&refs).expect("equal widths"),
                            b: Tensor::zeros(1, fan_out),
                        }
                    })
                    .collect();
                StageParams { layers, residual: residual_dims(topo, j).iter().map(|_| None).collect() }
            })
            .collect();
        Ok(Self { stages })
    }

    pub fn check_shapes(&self, topo: &PipelineTopology) -> Result<(), PipelineError> {
        if self.stages.len() != topo.n_stages() {
            return Err(PipelineError::Shape(format!(
                "{} stage parameter sets for {} stages",
                self.stages.len(),
                topo.n_stages()
            )));
        }
        for (idx, stage) in self.stages.iter().enumerate() {
            let j = idx + 1;
            let dims = layer_dims(topo, j);
            if stage.layers.len() != dims.len() {
                return Err(PipelineError::Shape(format!("stage {j}: wrong layer count")));
            }
            for (d, (i, o)) in stage.layers.iter().zip(dims) {
                if d.w.shape() != [i, o] || d.b.shape() != [1, o] {
                    return Err(PipelineError::Shape(format!(
                        "stage {j}: expected a {i}x{o} layer, found {:?}",
                        d.w.shape()
                    )));
                }
            }
            let res = residual_dims(topo, j);
            let ok = stage.residual.len() == res.len()
                && stage.residual.iter().zip(&res).all(|(p, d)| match (p, d) {
                    (None, None) => true,
                    (Some(t), Some((i, o))) => t.shape() == [*i, *o],
                    _ => false,
                });
            if !ok {
                return Err(PipelineError::Shape(format!("stage {j}: residual projections")));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
