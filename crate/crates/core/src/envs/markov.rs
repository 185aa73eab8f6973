use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Action, Env, EnvError};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Key `(s_{t−d}, a_t)`.
    RawDelayed,
    /// Key `(s_{t−d}, a_{t−d}, …, a_{t−1}, a_t)`.
    Augmented,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovReport {
    /// Mean total-variation distance over usable buckets.
    pub divergence: f64,
    /// Same statistic under shuffled policy labels.
    pub null_mean: f64,
    pub null_sd: f64,
    pub buckets_used: usize,
    /// Buckets with fewer than `min_count` samples under either policy.
    pub buckets_excluded: usize,
}

impl MarkovReport {
    pub fn threshold(&self) -> f64 {
        self.null_mean + 3.0 * self.null_sd
    }

    pub fn within_noise(&self) -> bool {
        self.divergence <= self.threshold()
    }
}

const MIN_COUNT: usize = 30;
const PERMUTATIONS: usize = 200;

type Buckets = BTreeMap<Vec<usize>, [Vec<usize>; 2]>;

fn sample_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn collect(
    env: &mut dyn Env,
    policy: &[f64],
    condition: Conditioning,
    delay: usize,
    samples: usize,
    seed: u64,
    slot: usize,
    buckets: &mut Buckets,
) -> Result<(), EnvError> {
    let mut rng = RngStream::new(seed).child("markov-policy", slot as u64).rng();
    let mut taken = 0;
    while taken < samples {
        env.reset();
        let mut states = vec![env.state_index().ok_or_else(|| {
            EnvError::Config("markov_check needs an environment with indexed states".into())
        })?];
        let mut actions: Vec<usize> = Vec::new();
        loop {
            let a = sample_action(policy, rng.random());
            actions.push(a);
            let t = actions.len() - 1;
            if t >= delay {
                let mut key = vec![states[t - delay]];
                if condition == Conditioning::Augmented {
                    key.extend_from_slice(&actions[t - delay..t]);
                }
                key.push(a);
                let target = states[t - delay + 1];
                buckets.entry(key).or_insert_with(|| [Vec::new(), Vec::new()])[slot].push(target);
                taken += 1;
                if taken >= samples {
                    break;
                }
            }
            let r = env.step(&Action::Discrete(a))?;
            if r.done() {
                break;
            }
            states.push(env.state_index().expect("indexed above"));
        }
    }
    Ok(())
}

fn tv(a: &[usize], b: &[usize], n: usize) -> f64 {
    let mut ca = vec![0.0; n];
    let mut cb = vec![0.0; n];
    for &s in a {
        ca[s] += 1.0;
    }
    for &s in b {
        cb[s] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    0.5 * ca.iter().zip(&cb).map(|(x, y)| (x / na - y / nb).abs()).sum::<f64>()
}

/// Tests whether the next observed state depends on the data-collection
/// policy once conditioned on the delayed key. Each state-independent policy
/// (a distribution over discrete actions) gathers `samples` keyed
/// transitions; the statistic is compared against a label-permutation null.
pub fn markov_check(
    env: &mut dyn Env,
    policy_a: &[f64],
    policy_b: &[f64],
    condition: Conditioning,
    delay: usize,
    samples: usize,
    seed: u64,
) -> Result<MarkovReport, EnvError> {
    if delay == 0 {
        return Err(EnvError::Config("delay must be at least 1".into()));
    }
    let n_states = env.spec().obs_dim;
    let mut buckets = Buckets::new();
    collect(env, policy_a, condition, delay, samples, seed, 0, &mut buckets)?;
    collect(env, policy_b, condition, delay, samples, seed, 1, &mut buckets)?;

    let used: Vec<&[Vec<usize>; 2]> = buckets
        .values()
        .filter(|[a, b]| a.len() >= MIN_COUNT && b.len() >= MIN_COUNT)
        .collect();
    let excluded = buckets.len() - used.len();
    if used.is_empty() {
        return Err(EnvError::Config("no condition bucket has enough samples".into()));
    }
    let stat = |pairs: &mut dyn Iterator<Item = (&[usize], &[usize])>| -> f64 {
        let v: Vec<f64> = pairs.map(|(a, b)| tv(a, b, n_states)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let divergence = stat(&mut used.iter().map(|[a, b]| (a.as_slice(), b.as_slice())));

    let mut rng = RngStream::new(seed).substream("markov-null");
    let mut pooled: Vec<(Vec<usize>, usize)> = used
        .iter()
        .map(|[a, b]| (a.iter().chain(b.iter()).copied().collect(), a.len()))
        .collect();
    let mut null = Vec::with_capacity(PERMUTATIONS);
    for _ in 0..PERMUTATIONS {
        for (p, _) in pooled.iter_mut() {
            p.shuffle(&mut rng);
        }
        null.push(stat(&mut pooled.iter().map(|(p, na)| (&p[..*na], &p[*na..]))));
    }
    let null_mean = null.iter().sum::<f64>() / null.len() as f64;
    let var = null.iter().map(|v| (v - null_mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64;
    Ok(MarkovReport {
        divergence,
        null_mean,
        null_sd: var.sqrt(),
        buckets_used: used.len(),
        buckets_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Coupling, WorstCase};

    #[test]
    fn identical_policies_are_within_noise() {
        let mut env = WorstCase::new(3, 0.8, 2).unwrap().with_coupling(Coupling::ActionShift);
        let pol = [0.5, 0.3, 0.2];
        for cond in [Conditioning::RawDelayed, Conditioning::Augmented] {
            let r = markov_check(&mut env, &pol, &pol, cond, 1, 20_000, 5).unwrap();
            assert!(r.within_noise(), "{cond:?}: {r:?}");
        }
    }
}
