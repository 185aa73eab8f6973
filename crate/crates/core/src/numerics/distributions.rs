//! Policy heads: tanh-squashed Gaussian for continuous actions, categorical
//! for discrete ones.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal noise of the given shape.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// `ln(1 - tanh(u)^2)` evaluated stably.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - super::tape::softplus(-2.0 * u))
}

/// Squashed-Gaussian action and per-row log-density for given noise `eps`.
pub fn squashed_gaussian_with_noise(
    mean: &Tensor,
    log_std: &Tensor,
    eps: &Tensor,
) -> Result<(Tensor, Tensor), NumericsError> {
    mean.same_shape(log_std)?;
    mean.same_shape(eps)?;
    let (m, n) = mean.dims2()?;
    let mut action = vec![0.0; m * n];
    let mut log_prob = vec![0.0; m];
    for r in 0..m {
        let mut lp = 0.0;
        for c in 0..n {
            let i = r * n + c;
            let ls = log_std.data()[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let e = eps.data()[i];
            let u = mean.data()[i] + ls.exp() * e;
            action[i] = u.tanh();
            lp += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        }
        log_prob[r] = lp;
    }
    Ok((Tensor::new(vec![m, n], action)?, Tensor::column(&log_prob)))
}

/// Samples `tanh(mean + std·ε)` with its log-density, including the tanh
/// Jacobian correction per dimension.
pub fn sample_squashed_gaussian(
    mean: &Tensor,
    log_std: &Tensor,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor), NumericsError> {
    let eps = standard_normal(mean.rows(), mean.cols(), rng);
    squashed_gaussian_with_noise(mean, log_std, &eps)
}

/// Log-density of an already squashed action in (-1, 1).
pub fn squashed_gaussian_log_prob(
    mean: &Tensor,
    log_std: &Tensor,
    action: &Tensor,
) -> Result<Tensor, NumericsError> {
    mean.same_shape(log_std)?;
    mean.same_shape(action)?;
    let (m, n) = mean.dims2()?;
    let mut out = vec![0.0; m];
    for (r, lp) in out.iter_mut().enumerate() {
        for c in 0..n {
            let i = r * n + c;
            let ls = log_std.data()[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let u = action.data()[i].atanh();
            let z = (u - mean.data()[i]) / ls.exp();
            *lp += -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        }
    }
    Ok(Tensor::column(&out))
}

/// The distribution mode, `tanh(mean)`.
pub fn squashed_gaussian_mode(mean: &Tensor) -> Tensor {
    mean.tanh()
}

/// Reparameterised squashed-Gaussian sample on a tape; returns the action
/// and the `[m, 1]` log-density.
pub fn traced_squashed_gaussian(
    tape: &mut Tape,
    mean: Var,
    log_std: Var,
    eps: &Tensor,
) -> Result<(Var, Var), NumericsError> {
    let (m, n) = tape.value(mean).dims2()?;
    let ls = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)?;
    let std = tape.exp(ls)?;
    let noise = tape.leaf(eps.clone());
    let spread = tape.mul(std, noise)?;
    let u = tape.add(mean, spread)?;
    let action = tape.tanh(u)?;

    let gauss_const: Vec<f64> = (0..m)
        .map(|r| eps.row_slice(r).iter().map(|e| -0.5 * e * e - HALF_LN_2PI).sum())
        .collect();
    let gauss_const = tape.leaf(Tensor::column(&gauss_const));
    let ls_sum = tape.sum_cols(ls)?;
    let gauss = tape.sub(gauss_const, ls_sum)?;

    // ln(1 - tanh²u) = 2 ln 2 - 2 (u + softplus(-2u))
    let neg2u = tape.scale(u, -2.0)?;
    let sp = tape.softplus(neg2u)?;
    let inner = tape.add(u, sp)?;
    let inner_sum = tape.sum_cols(inner)?;
    let inner_sum = tape.scale(inner_sum, -2.0)?;
    let jac = tape.add_scalar(inner_sum, 2.0 * std::f64::consts::LN_2 * n as f64)?;
    let log_prob = tape.sub(gauss, jac)?;
    Ok((action, log_prob))
}

/// Samples one index per row from `softmax(logits)`; returns indices and
/// per-row log-probabilities.
pub fn sample_categorical(
    logits: &Tensor,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>), NumericsError> {
    let logp = logits.log_softmax_rows()?;
    let (m, n) = logp.dims2()?;
    let mut actions = Vec::with_capacity(m);
    let mut lps = Vec::with_capacity(m);
    for r in 0..m {
        let row = logp.row_slice(r);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (c, lp) in row.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                pick = c;
                break;
            }
        }
        actions.push(pick);
        lps.push(row[pick]);
    }
    Ok((actions, lps))
}

pub fn categorical_mode(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row_slice(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Per-row entropy of `softmax(logits)` on a tape, `[m, 1]`.
pub fn traced_categorical_entropy(tape: &mut Tape, log_probs: Var) -> Result<Var, NumericsError> {
    let p = tape.exp(log_probs)?;
    let plogp = tape.mul(p, log_probs)?;
    let s = tape.sum_cols(plogp)?;
    tape.scale(s, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn zero_std_limit_is_tanh_mean() {
        let mean = Tensor::row(&[0.3, -1.2]);
        let log_std = Tensor::full(1, 2, LOG_STD_MIN);
        let mut rng = RngStream::new(1).rng();
        let (a, _) = sample_squashed_gaussian(&mean, &log_std, &mut rng).unwrap();
        assert!(a.max_abs_diff(&squashed_gaussian_mode(&mean)).unwrap() < 0.05);
        let (a0, _) =
            squashed_gaussian_with_noise(&mean, &log_std, &Tensor::zeros(1, 2)).unwrap();
        assert!(a0.max_abs_diff(&mean.tanh()).unwrap() < 1e-15);
    }

    #[test]
    fn zero_mean_zero_noise_gives_zero_action() {
        let z = Tensor::zeros(1, 3);
        let (a, _) = squashed_gaussian_with_noise(&z, &z, &z).unwrap();
        assert_eq!(a.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn density_integrates_to_one() {
        // midpoint rule on (-1, 1) in the squashed space
        for &(mu, ls) in &[(0.0, 0.0), (0.7, -0.5), (-1.5, 0.3), (0.2, -1.5)] {
            let cells = 200_000;
            let h = 2.0 / cells as f64;
            let grid: Vec<f64> = (0..cells).map(|i| -1.0 + (i as f64 + 0.5) * h).collect();
            let means = Tensor::column(&vec![mu; cells]);
            let stds = Tensor::column(&vec![ls; cells]);
            let lp = squashed_gaussian_log_prob(&means, &stds, &Tensor::column(&grid)).unwrap();
            let total: f64 = lp.data().iter().map(|v| v.exp() * h).sum();
            assert!((total - 1.0).abs() < 0.01, "mu={mu} ls={ls}: {total}");
        }
    }

    #[test]
    fn sampled_log_prob_matches_density() {
        let mean = Tensor::row(&[0.4, -0.2]);
        let log_std = Tensor::row(&[-0.3, 0.1]);
        let eps = Tensor::row(&[0.5, -1.1]);
        let (a, lp) = squashed_gaussian_with_noise(&mean, &log_std, &eps).unwrap();
        let lp2 = squashed_gaussian_log_prob(&mean, &log_std, &a).unwrap();
        assert!(lp.max_abs_diff(&lp2).unwrap() < 1e-9);

        let mut tape = Tape::new();
        let m = tape.leaf(mean.clone());
        let s = tape.leaf(log_std.clone());
        let (ta, tlp) = traced_squashed_gaussian(&mut tape, m, s, &eps).unwrap();
        assert!(tape.value(ta).max_abs_diff(&a).unwrap() < 1e-15);
        assert!(tape.value(tlp).max_abs_diff(&lp).unwrap() < 1e-12);
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let logits = Tensor::row(&[0.0, (2.0f64).ln(), (3.0f64).ln()]);
        let mut rng = RngStream::new(5).rng();
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            let (a, lp) = sample_categorical(&logits, &mut rng).unwrap();
            counts[a[0]] += 1;
            assert!(lp[0] <= 0.0);
        }
        for (c, expected) in counts.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((*c as f64 / 60_000.0 - expected).abs() < 0.01);
        }
        assert_eq!(categorical_mode(&logits), vec![2]);
    }
}
