//! Ring-buffer experience replay with uniform batch sampling.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True only for genuine terminals (the bootstrap term is masked).
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 20)),
            write: 0,
        }
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
            self.data[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Uniform sample of `batch` distinct transitions.
    pub fn sample<'a, R: Rng>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Transition> {
        assert!(batch <= self.data.len(), "buffer underflow");
        rand::seq::index::sample(rng, self.data.len(), batch)
            .into_iter()
            .map(|i| &self.data[i])
            .collect()
    }
}
