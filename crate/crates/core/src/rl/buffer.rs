use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::Rng;

/// One agent tick. `obs`/`next_obs` are the true environment states the
/// critic trains on; `actor_obs`/`next_actor_obs` are what the pipeline was
/// fed (including any history augmentation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub actor_obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub next_actor_obs: Vec<f64>,
    /// True terminal (not time-limit truncation).
    pub terminated: bool,
    pub episode: u64,
    pub step: u64,
}

/// Fixed-capacity ring of transitions appended in time order.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    /// Next slot to overwrite once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, data: Vec::with_capacity(capacity.min(1 << 16)), head: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// `idx` counts from the oldest stored entry.
    fn chronological(&self, idx: usize) -> &Transition {
        let start = if self.data.len() < self.capacity { 0 } else { self.head };
        &self.data[(start + idx) % self.data.len()]
    }

    pub fn get(&self, idx: usize) -> &Transition {
        self.chronological(idx)
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.data.len())).collect()
    }

    /// Up to `len` consecutive transitions of one episode ending at
    /// chronological index `end`; shorter when the episode (or the stored
    /// history) starts later.
    pub fn window(&self, end: usize, len: usize) -> Vec<&Transition> {
        let last = self.chronological(end);
        let mut out = vec![last];
        let mut idx = end;
        while out.len() < len && idx > 0 {
            let prev = self.chronological(idx - 1);
            if prev.episode != last.episode || prev.step + 1 != out[out.len() - 1].step {
                break;
            }
            out.push(prev);
            idx -= 1;
        }
        out.reverse();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn t(episode: u64, step: u64) -> Transition {
        Transition {
            obs: vec![step as f64],
            actor_obs: vec![],
            action: vec![],
            reward: 0.0,
            next_obs: vec![],
            next_actor_obs: vec![],
            terminated: false,
            episode,
            step,
        }
    }

    #[test]
    fn windows_stay_inside_one_episode() {
        let mut buf = ReplayBuffer::new(100);
        for s in 0..5 {
            buf.push(t(0, s));
        }
        for s in 0..5 {
            buf.push(t(1, s));
        }
        let w = buf.window(6, 4);
        assert_eq!(w.iter().map(|x| (x.episode, x.step)).collect::<Vec<_>>(), [(1, 0), (1, 1)]);
        let w = buf.window(4, 3);
        assert_eq!(w.iter().map(|x| x.step).collect::<Vec<_>>(), [2, 3, 4]);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(4);
        for s in 0..10 {
            buf.push(t(0, s));
        }
        assert_eq!(buf.len(), 4);
        assert_eq!(buf.get(0).step, 6);
        assert_eq!(buf.get(3).step, 9);
        assert_eq!(buf.window(3, 10).len(), 4);
        let mut rng = RngStream::new(0).rng();
        assert!(buf.sample_indices(50, &mut rng).iter().all(|i| *i < 4));
    }
}
