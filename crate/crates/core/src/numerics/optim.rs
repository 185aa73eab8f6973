use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, eps: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
    ) -> Result<(), NumericsError> {
        if params.len() != grads.len() {
            return Err(NumericsError::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            p.same_shape(g)?;
            if !g.is_finite() {
                return Err(NumericsError::NonFinite("adam gradient"));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut x = Tensor::row(&[3.0, -2.0]);
        let mut opt = Adam::new(0.1, 1e-8);
        for _ in 0..500 {
            let g = x.scale(2.0);
            opt.update(&mut [&mut x], &[g]).unwrap();
        }
        assert!(x.norm() < 1e-2);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::row(&[3.0]), Tensor::row(&[4.0])];
        let before = clip_global_norm(&mut g, 0.5);
        assert!((before - 5.0).abs() < 1e-12);
        let after: f64 = g.iter().map(|t| t.data()[0].powi(2)).sum::<f64>().sqrt();
        assert!((after - 0.5).abs() < 1e-12);
    }
}
