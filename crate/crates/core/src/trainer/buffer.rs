use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::env::{ActionId, Observation};
use crate::nn::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BufferError {
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("transition has observation width {got}, buffer stores {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("transition contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: ActionId,
    pub r: f64,
    pub s_next: Observation,
    pub done: bool,
    pub truncated: bool,
}

impl Transition {
    pub fn is_valid(&self) -> bool {
        self.s.is_finite() && self.s_next.is_finite() && self.r.is_finite()
    }
}

/// Fixed-capacity ring of transitions stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub(crate) capacity: usize,
    pub(crate) obs_dim: usize,
    pub(crate) cursor: usize,
    pub(crate) obs: Vec<f64>,
    pub(crate) next_obs: Vec<f64>,
    pub(crate) actions: Vec<usize>,
    pub(crate) rewards: Vec<f64>,
    pub(crate) done: Vec<bool>,
    pub(crate) truncated: Vec<bool>,
}

/// A sampled minibatch with observations already divided by the
/// normalisation constant.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub obs: Array2<F>,
    pub next_obs: Array2<F>,
    pub actions: Vec<usize>,
    pub rewards: Vec<F>,
    pub done: Vec<bool>,
}

impl<F> Batch<F> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            capacity,
            obs_dim,
            cursor: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            done: Vec::new(),
            truncated: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), BufferError> {
        for o in [&t.s, &t.s_next] {
            if o.dim() != self.obs_dim {
                return Err(BufferError::WidthMismatch {
                    expected: self.obs_dim,
                    got: o.dim(),
                });
            }
        }
        if !t.is_valid() {
            return Err(BufferError::NonFinite);
        }
        let d = self.obs_dim;
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.s);
            self.next_obs.extend_from_slice(&t.s_next);
            self.actions.push(t.a.0);
            self.rewards.push(t.r);
            self.done.push(t.done);
            self.truncated.push(t.truncated);
        } else {
            let i = self.cursor;
            self.obs[i * d..(i + 1) * d].copy_from_slice(&t.s);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.s_next);
            self.actions[i] = t.a.0;
            self.rewards[i] = t.r;
            self.done[i] = t.done;
            self.truncated[i] = t.truncated;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len() {
            return None;
        }
        let d = self.obs_dim;
        Some(Transition {
            s: Observation::new(self.obs[i * d..(i + 1) * d].to_vec()),
            a: ActionId(self.actions[i]),
            r: self.rewards[i],
            s_next: Observation::new(self.next_obs[i * d..(i + 1) * d].to_vec()),
            done: self.done[i],
            truncated: self.truncated[i],
        })
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, BufferError> {
        if self.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        let len = self.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>, BufferError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.get(i).expect("index in range"))
            .collect())
    }

    pub fn batch<F: Real>(&self, indices: &[usize], norm: f64) -> Batch<F> {
        let d = self.obs_dim;
        let rows = |src: &[f64]| {
            Array2::from_shape_fn((indices.len(), d), |(r, c)| F::lit(src[indices[r] * d + c] / norm))
        };
        Batch {
            obs: rows(&self.obs),
            next_obs: rows(&self.next_obs),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            rewards: indices.iter().map(|&i| F::lit(self.rewards[i])).collect(),
            done: indices.iter().map(|&i| self.done[i]).collect(),
        }
    }
}
