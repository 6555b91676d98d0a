//! Target construction and action selection: mixed scalar and
//! distributional targets, promising-successor selection and the
//! successor-aware greedy rule, with the plain DQN/QR-DQN targets as the
//! `alpha = 1` cases.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ActionId;
use crate::nn::{argmax, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no candidate successors to choose from")]
    EmptyCandidates,
    #[error("length mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("invalid mix: {0}")]
    InvalidMix(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMix {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TargetMix {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, AgentError> {
        let mix = Self { alpha, beta, gamma };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AgentError::InvalidMix("alpha must lie in [0, 1]"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(AgentError::InvalidMix("beta must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AgentError::InvalidMix("gamma must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Index and value of the best candidate; ties go to the lowest index.
pub fn select_promising_successor<F: Real>(values: &[F]) -> Result<(usize, F), AgentError> {
    let i = argmax(values.iter().copied()).ok_or(AgentError::EmptyCandidates)?;
    Ok((i, values[i]))
}

/// `r + gamma * ((1 - alpha) * v_hat + alpha * max_q_next)`, or `r` at a
/// terminal transition.
pub fn sadq_target<F: Real>(r: F, mix: &TargetMix, v_hat: F, max_q_next: F, done: bool) -> F {
    if done {
        return r;
    }
    let alpha = F::lit(mix.alpha);
    let keep = F::lit(1.0 - mix.alpha);
    r + F::lit(mix.gamma) * (keep * v_hat + alpha * max_q_next)
}

pub fn dqn_target<F: Real>(r: F, gamma: f64, max_q_next: F, done: bool) -> F {
    if done {
        return r;
    }
    r + F::lit(gamma) * max_q_next
}

/// `argmax_a Q(s,a) + beta * V(s'_a)`; ties go to the lowest index.
pub fn sadq_action<F: Real>(q_values: &[F], successor_values: &[F], beta: f64) -> Result<ActionId, AgentError> {
    if q_values.len() != successor_values.len() {
        return Err(AgentError::ShapeMismatch {
            left: q_values.len(),
            right: successor_values.len(),
        });
    }
    let b = F::lit(beta);
    argmax(q_values.iter().zip(successor_values).map(|(&q, &v)| q + b * v))
        .map(ActionId)
        .ok_or(AgentError::EmptyCandidates)
}

/// With probability `epsilon` a uniform action, otherwise `greedy`. Always
/// consumes one uniform draw, plus one more when exploring.
pub fn epsilon_greedy<R: Rng + ?Sized>(greedy: ActionId, epsilon: f64, action_count: usize, rng: &mut R) -> ActionId {
    let u: f64 = rng.random();
    if u < epsilon {
        ActionId(rng.random_range(0..action_count))
    } else {
        greedy
    }
}

/// Return distribution as quantile atoms, optionally with explicit
/// probability masses per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileVector {
    pub atoms: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl QuantileVector {
    pub fn uniform(atoms: Vec<f64>) -> Self {
        Self { atoms, weights: None }
    }

    /// Atoms at increasing fractions `taus` in (0,1); each atom gets the
    /// mass of the interval between the midpoints of its neighbours.
    pub fn with_fractions(atoms: Vec<f64>, taus: &[f64]) -> Result<Self, AgentError> {
        if atoms.len() != taus.len() {
            return Err(AgentError::ShapeMismatch {
                left: atoms.len(),
                right: taus.len(),
            });
        }
        if atoms.is_empty() {
            return Err(AgentError::EmptyCandidates);
        }
        let n = taus.len();
        let edge = |i: usize| match i {
            0 => 0.0,
            i if i == n => 1.0,
            i => 0.5 * (taus[i - 1] + taus[i]),
        };
        let weights = (0..n).map(|i| edge(i + 1) - edge(i)).collect();
        Ok(Self {
            atoms,
            weights: Some(weights),
        })
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

pub fn dist_expectation(z: &QuantileVector) -> f64 {
    match &z.weights {
        None => z.atoms.iter().sum::<f64>() / z.atoms.len() as f64,
        Some(w) => z.atoms.iter().zip(w).map(|(a, p)| a * p).sum(),
    }
}

/// Best (candidate, action) pair by expected return; `means` is
/// candidates x actions. Ties go to the lowest candidate, then action.
pub fn select_promising_successor_dist<F: Real>(means: ArrayView2<F>) -> Result<(usize, usize), AgentError> {
    let actions = means.ncols();
    if means.nrows() == 0 || actions == 0 {
        return Err(AgentError::EmptyCandidates);
    }
    let flat = argmax(means.iter().copied()).ok_or(AgentError::EmptyCandidates)?;
    Ok((flat / actions, flat % actions))
}

/// Atomwise `r + gamma * ((1 - alpha) * z_hat + alpha * z_next)`; every
/// atom is `r` at a terminal transition.
pub fn sadq_dist_target<F: Real>(r: F, mix: &TargetMix, z_hat: &[F], z_next: &[F], done: bool) -> Result<Vec<F>, AgentError> {
    if z_hat.len() != z_next.len() {
        return Err(AgentError::ShapeMismatch {
            left: z_hat.len(),
            right: z_next.len(),
        });
    }
    if done {
        return Ok(vec![r; z_next.len()]);
    }
    let (g, a, keep) = (F::lit(mix.gamma), F::lit(mix.alpha), F::lit(1.0 - mix.alpha));
    Ok(z_hat
        .iter()
        .zip(z_next)
        .map(|(&h, &n)| r + g * (keep * h + a * n))
        .collect())
}

/// Quantile-regression DQN target: every atom is `r + gamma * z`.
pub fn qr_dqn_target<F: Real>(r: F, gamma: f64, z_next: &[F], done: bool) -> Vec<F> {
    if done {
        return vec![r; z_next.len()];
    }
    let g = F::lit(gamma);
    z_next.iter().map(|&z| r + g * z).collect()
}

/// Mixture alternative: each atom comes from `z_hat` with probability
/// `1 - alpha`, otherwise from `z_next`, then is discounted and shifted.
pub fn sadq_dist_target_mixture<F: Real, R: Rng + ?Sized>(
    r: F,
    mix: &TargetMix,
    z_hat: &[F],
    z_next: &[F],
    done: bool,
    rng: &mut R,
) -> Result<Vec<F>, AgentError> {
    if z_hat.len() != z_next.len() {
        return Err(AgentError::ShapeMismatch {
            left: z_hat.len(),
            right: z_next.len(),
        });
    }
    if done {
        return Ok(vec![r; z_next.len()]);
    }
    let g = F::lit(mix.gamma);
    let mut out: Vec<F> = z_hat
        .iter()
        .zip(z_next)
        .map(|(&h, &n)| {
            let pick = if rng.random::<f64>() < mix.alpha { n } else { h };
            r + g * pick
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mix(alpha: f64, beta: f64, gamma: f64) -> TargetMix {
        TargetMix::new(alpha, beta, gamma).unwrap()
    }

    #[test]
    fn promising_successor_argmax_and_ties() {
        assert_eq!(select_promising_successor(&[3.0, 5.0, 1.0]).unwrap(), (1, 5.0));
        assert_eq!(select_promising_successor(&[2.0, 2.0, 2.0]).unwrap(), (0, 2.0));
        assert_eq!(
            select_promising_successor::<f64>(&[]),
            Err(AgentError::EmptyCandidates)
        );
    }

    #[test]
    fn mixed_target_arithmetic() {
        let y: f64 = sadq_target(1.0, &mix(0.8, 0.0, 0.99), 10.0, 12.0, false);
        assert!((y - 12.484).abs() < 1e-12);
        assert_eq!(sadq_target(-1.0, &mix(0.3, 0.0, 0.99), 10.0, 12.0, true), -1.0);
        assert_eq!(dqn_target(0.0, 0.99, 100.0, false), 99.0);
        assert_eq!(dqn_target(2.5, 0.99, 100.0, true), 2.5);
    }

    #[test]
    fn action_selection() {
        assert_eq!(sadq_action(&[1.0, 1.0], &[0.0, 2.0], 0.5).unwrap(), ActionId(1));
        assert_eq!(sadq_action(&[1.0, 3.0], &[9.0, 0.0], 0.0).unwrap(), ActionId(1));
        assert!(matches!(
            sadq_action(&[1.0], &[0.0, 2.0], 0.5),
            Err(AgentError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn expectation_modes() {
        assert_eq!(dist_expectation(&QuantileVector::uniform(vec![4.0; 5])), 4.0);
        assert_eq!(dist_expectation(&QuantileVector::uniform(vec![0.0, 10.0])), 5.0);
        let z = QuantileVector::with_fractions(vec![1.0, 2.0, 4.0], &[0.1, 0.5, 0.9]).unwrap();
        let w = z.weights().unwrap();
        assert!((w[0] - 0.3).abs() < 1e-15 && (w[1] - 0.4).abs() < 1e-15 && (w[2] - 0.3).abs() < 1e-15);
        assert!((dist_expectation(&z) - (0.3 + 0.8 + 1.2)).abs() < 1e-12);
    }

    #[test]
    fn distributional_selection_and_target() {
        let means = array![[0.0, 1.0], [2.0, 0.5], [3.0, 3.0]];
        assert_eq!(select_promising_successor_dist(means.view()).unwrap(), (2, 0));
        let means = array![[1.0, 1.0]];
        assert_eq!(select_promising_successor_dist(means.view()).unwrap(), (0, 0));
        let t = sadq_dist_target(0.0, &TargetMix { alpha: 0.5, beta: 0.0, gamma: 1.0 }, &[0.0, 2.0], &[2.0, 0.0], false)
            .unwrap();
        assert_eq!(t, vec![1.0, 1.0]);
        assert_eq!(sadq_dist_target(-2.0, &mix(0.5, 0.0, 0.9), &[0.0, 2.0], &[2.0, 0.0], true).unwrap(), vec![-2.0; 2]);
        assert!(sadq_dist_target(0.0, &mix(0.5, 0.0, 0.9), &[0.0], &[2.0, 0.0], false).is_err());
    }

    #[test]
    fn mixture_alpha_one_takes_next_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sadq_dist_target_mixture(1.0, &mix(1.0, 0.0, 0.5), &[9.0, 9.0], &[0.0, 2.0], false, &mut rng).unwrap();
        assert_eq!(t, vec![1.0, 2.0]);
    }

    #[test]
    fn epsilon_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| epsilon_greedy(ActionId(2), 0.0, 4, &mut rng) == ActionId(2)));
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<_> = (0..100).map(|_| epsilon_greedy(ActionId(0), 0.5, 3, &mut a)).collect();
        let ys: Vec<_> = (0..100).map(|_| epsilon_greedy(ActionId(0), 0.5, 3, &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn invalid_mix_rejected() {
        assert!(TargetMix::new(1.5, 0.0, 0.9).is_err());
        assert!(TargetMix::new(0.5, -1.0, 0.9).is_err());
        assert!(TargetMix::new(0.5, 0.0, 1.0).is_err());
    }
}
