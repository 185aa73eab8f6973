use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Ops, Rng, Tensor};
use crate::pipeline::Dense;

/// Plain feed-forward network with ReLU hidden layers and a linear output,
/// used for the undelayed critics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T = Tensor> {
    pub layers: Vec<Dense<T>>,
}

impl Mlp<Tensor> {
    /// `dims = [in, hidden…, out]`
    pub fn init(dims: &[usize], rng: &mut Rng) -> Self {
        Self { layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect() }
    }

    pub fn polyak(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.tensors_mut().into_iter().zip(source.tensors()) {
            for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
    }
}

impl<T> Mlp<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Mlp<U> {
        Mlp { layers: self.layers.iter().map(|d| Dense { w: f(&d.w), b: f(&d.b) }).collect() }
    }

    pub fn tensors(&self) -> Vec<&T> {
        self.layers.iter().flat_map(|d| [&d.w, &d.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        self.layers.iter_mut().flat_map(|d| [&mut d.w, &mut d.b]).collect()
    }

    pub fn forward<O: Ops<V = T>>(&self, ops: &mut O, x: &T) -> Result<T, NumericsError>
    where
        T: Clone,
    {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, d) in self.layers.iter().enumerate() {
            let z = ops.matmul(&h, &d.w)?;
            let z = ops.add_row(&z, &d.b)?;
            h = if i + 1 < n { ops.relu(&z)? } else { z };
        }
        Ok(h)
    }
}
