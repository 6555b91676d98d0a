//! Gaussian one-step dynamics model trained through a reparameterised
//! sample.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionId, Observation};
use crate::nn::{AdamState, Activation, DenseStack, NnError, ParamSet, Real, Tape, Var};
use crate::trainer::Transition;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model loss needs at least one transition")]
    EmptyBatch,
    #[error("action {index} out of range for {count} actions")]
    InvalidAction { index: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelLoss {
    /// Squared error between the reparameterised sample and the target.
    #[default]
    Mse,
    /// Diagonal Gaussian negative log-likelihood (constant dropped).
    Nll,
}

/// Mean and log-variance heads over `[s / state_norm, onehot(a)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynModel<F> {
    pub params: ParamSet<F>,
    pub mu_net: DenseStack,
    pub sigma_net: DenseStack,
    pub obs_dim: usize,
    pub action_count: usize,
    pub state_norm: f64,
    pub loss: ModelLoss,
}

impl<F: Real> DynModel<F> {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_count: usize,
        hidden: &[usize],
        state_norm: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim + action_count];
        sizes.extend(hidden);
        sizes.push(obs_dim);
        let mut params = ParamSet::new();
        let mu_net = DenseStack::init(sizes.clone(), Activation::Relu, false, "mu", &mut params, rng);
        let sigma_net = DenseStack::init(sizes, Activation::Relu, false, "sigma", &mut params, rng);
        Self {
            params,
            mu_net,
            sigma_net,
            obs_dim,
            action_count,
            state_norm,
            loss: ModelLoss::Mse,
        }
    }

    /// Concatenates already-normalised states with one-hot actions.
    pub fn encode(&self, x: ArrayView2<F>, actions: &[usize]) -> Result<Array2<F>, DynError> {
        if x.ncols() != self.obs_dim || actions.len() != x.nrows() {
            return Err(NnError::ShapeMismatch {
                context: "model input",
                expected: vec![actions.len(), self.obs_dim],
                got: x.shape().to_vec(),
            }
            .into());
        }
        let mut out = Array2::zeros((x.nrows(), self.obs_dim + self.action_count));
        out.slice_mut(s![.., ..self.obs_dim]).assign(&x);
        for (r, &a) in actions.iter().enumerate() {
            if a >= self.action_count {
                return Err(DynError::InvalidAction {
                    index: a,
                    count: self.action_count,
                });
            }
            out[[r, self.obs_dim + a]] = F::one();
        }
        Ok(out)
    }

    /// Every state paired with every action: row `i * |A| + a`.
    pub fn encode_all_actions(&self, x: ArrayView2<F>) -> Result<Array2<F>, DynError> {
        let n = x.nrows();
        let k = self.action_count;
        let rows = Array2::from_shape_fn((n * k, x.ncols()), |(r, c)| x[[r / k, c]]);
        let actions: Vec<usize> = (0..n * k).map(|r| r % k).collect();
        self.encode(rows.view(), &actions)
    }

    /// Mean and clamped log-variance for encoded inputs.
    pub fn heads(&self, input: ArrayView2<F>) -> Result<(Array2<F>, Array2<F>), DynError> {
        let mu = self.mu_net.forward(&self.params, input)?;
        let lo = F::lit(LOGVAR_MIN);
        let hi = F::lit(LOGVAR_MAX);
        let logvar = self.sigma_net.forward(&self.params, input)?.mapv(|v| v.max(lo).min(hi));
        Ok((mu, logvar))
    }

    /// `mu + sigma * eps` for encoded inputs; `eps` has one row per input.
    pub fn sample_encoded(&self, input: ArrayView2<F>, eps: ArrayView2<F>) -> Result<Array2<F>, DynError> {
        let (mu, logvar) = self.heads(input)?;
        if eps.shape() != mu.shape() {
            return Err(NnError::ShapeMismatch {
                context: "model noise",
                expected: mu.shape().to_vec(),
                got: eps.shape().to_vec(),
            }
            .into());
        }
        let half = F::lit(0.5);
        let mut out = mu;
        ndarray::Zip::from(&mut out)
            .and(&logvar)
            .and(&eps)
            .for_each(|m, &lv, &e| *m += (lv * half).exp() * e);
        Ok(out)
    }

    /// One sampled successor per (state, action), state-major. Inputs and
    /// outputs are in normalised units.
    pub fn successors_batch<R: Rng + ?Sized>(&self, x: ArrayView2<F>, rng: &mut R) -> Result<Array2<F>, DynError> {
        let input = self.encode_all_actions(x)?;
        let eps = standard_normal(input.nrows(), self.obs_dim, rng);
        self.sample_encoded(input.view(), eps.view())
    }

    fn normalise(&self, s: &Observation) -> Result<Array2<F>, DynError> {
        if s.dim() != self.obs_dim {
            return Err(NnError::ShapeMismatch {
                context: "model observation",
                expected: vec![self.obs_dim],
                got: vec![s.dim()],
            }
            .into());
        }
        Ok(Array2::from_shape_fn((1, self.obs_dim), |(_, c)| F::lit(s[c] / self.state_norm)))
    }

    /// Mean and variance of the predicted successor, in normalised units.
    pub fn predict_distribution(&self, s: &Observation, a: ActionId) -> Result<(Vec<f64>, Vec<f64>), DynError> {
        let input = self.encode(self.normalise(s)?.view(), &[a.0])?;
        let (mu, logvar) = self.heads(input.view())?;
        Ok((
            mu.iter().map(|v| v.as_f64()).collect(),
            logvar.iter().map(|v| v.as_f64().exp()).collect(),
        ))
    }

    /// `mu + sigma * noise`; draws standard normal noise from `rng` when
    /// `noise` is `None`.
    pub fn sample_successor<R: Rng + ?Sized>(
        &self,
        s: &Observation,
        a: ActionId,
        noise: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<Vec<f64>, DynError> {
        let input = self.encode(self.normalise(s)?.view(), &[a.0])?;
        let eps = match noise {
            Some(n) => Array2::from_shape_fn((1, n.len()), |(_, c)| F::lit(n[c])),
            None => standard_normal(1, self.obs_dim, rng),
        };
        Ok(self
            .sample_encoded(input.view(), eps.view())?
            .iter()
            .map(|v| v.as_f64())
            .collect())
    }

    /// One independently sampled successor per action, in action order.
    pub fn predict_all_successors<R: Rng + ?Sized>(
        &self,
        s: &Observation,
        rng: &mut R,
    ) -> Result<Vec<(ActionId, Vec<f64>)>, DynError> {
        let out = self.successors_batch(self.normalise(s)?.view(), rng)?;
        Ok(out
            .rows()
            .into_iter()
            .enumerate()
            .map(|(a, row)| (ActionId(a), row.iter().map(|v| v.as_f64()).collect()))
            .collect())
    }

    /// Records the training loss on `tape`. `target` holds normalised
    /// successors and `eps` the fixed reparameterisation noise.
    pub fn loss_tape(
        &self,
        tape: &mut Tape<F>,
        input: Array2<F>,
        target: Array2<F>,
        eps: Array2<F>,
    ) -> Result<Var, DynError> {
        let x = tape.constant(input);
        let mu = self.mu_net.forward_tape(tape, &self.params, x)?;
        let raw = self.sigma_net.forward_tape(tape, &self.params, x)?;
        let logvar = tape.clamp(raw, F::lit(LOGVAR_MIN), F::lit(LOGVAR_MAX));
        let target = tape.constant(target);
        match self.loss {
            ModelLoss::Mse => {
                let half = tape.scale(logvar, F::lit(0.5));
                let sigma = tape.exp(half);
                let noise = tape.constant(eps);
                let spread = tape.mul(sigma, noise)?;
                let sample = tape.add(mu, spread)?;
                let diff = tape.sub(sample, target)?;
                let sq = tape.square(diff);
                Ok(tape.mean(sq))
            }
            ModelLoss::Nll => {
                let diff = tape.sub(target, mu)?;
                let sq = tape.square(diff);
                let neg = tape.scale(logvar, -F::one());
                let precision = tape.exp(neg);
                let scaled = tape.mul(sq, precision)?;
                let total = tape.add(scaled, logvar)?;
                let m = tape.mean(total);
                Ok(tape.scale(m, F::lit(0.5)))
            }
        }
    }

    /// Input, target and noise arrays for a list of transitions.
    pub fn training_arrays<R: Rng + ?Sized>(
        &self,
        batch: &[Transition],
        rng: &mut R,
    ) -> Result<(Array2<F>, Array2<F>, Array2<F>), DynError> {
        if batch.is_empty() {
            return Err(DynError::EmptyBatch);
        }
        let d = self.obs_dim;
        let norm = self.state_norm;
        for t in batch {
            if t.s.dim() != d || t.s_next.dim() != d {
                return Err(NnError::ShapeMismatch {
                    context: "model transition",
                    expected: vec![d],
                    got: vec![t.s.dim(), t.s_next.dim()],
                }
                .into());
            }
        }
        let x = Array2::from_shape_fn((batch.len(), d), |(r, c)| F::lit(batch[r].s[c] / norm));
        let target = Array2::from_shape_fn((batch.len(), d), |(r, c)| F::lit(batch[r].s_next[c] / norm));
        let actions: Vec<usize> = batch.iter().map(|t| t.a.0).collect();
        let input = self.encode(x.view(), &actions)?;
        let eps = standard_normal(batch.len(), d, rng);
        Ok((input, target, eps))
    }

    /// Loss on `batch` with one fresh noise draw per transition.
    pub fn model_loss<R: Rng + ?Sized>(&self, batch: &[Transition], rng: &mut R) -> Result<f64, DynError> {
        let (input, target, eps) = self.training_arrays(batch, rng)?;
        let mut tape = Tape::new();
        let loss = self.loss_tape(&mut tape, input, target, eps)?;
        Ok(tape.scalar(loss).as_f64())
    }

    /// One optimiser step; returns the pre-update loss.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState<F>,
        input: Array2<F>,
        target: Array2<F>,
        eps: Array2<F>,
    ) -> Result<F, DynError> {
        let mut tape = Tape::new();
        let loss = self.loss_tape(&mut tape, input, target, eps)?;
        let grads = tape.backward(loss, &self.params)?;
        adam.update(&mut self.params, &grads)?;
        Ok(tape.scalar(loss))
    }
}

pub fn standard_normal<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::lit(rng.sample::<f64, _>(StandardNormal)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(model: &mut DynModel<f64>) {
        for i in 0..model.params.len() {
            model.params.get_mut(i).fill(0.0);
        }
    }

    /// Single linear layer per head so outputs can be set by hand.
    fn linear_model() -> DynModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = DynModel::<f64>::new(2, 2, &[], 1.0, &mut rng);
        zeroed(&mut m);
        m
    }

    #[test]
    fn zero_nets_give_zero_mean_and_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = DynModel::<f64>::new(3, 2, &[8], 1.0, &mut rng);
        zeroed(&mut m);
        let (mu, var) = m.predict_distribution(&Observation::new(vec![0.3, -1.0, 2.0]), ActionId(1)).unwrap();
        assert_eq!(mu, vec![0.0; 3]);
        assert_eq!(var, vec![1.0; 3]);
    }

    #[test]
    fn hand_set_linear_heads() {
        let mut m = linear_model();
        m.state_norm = 2.0;
        // input [s0/2, s1/2, a0, a1]; mu = W^T input + b
        m.params.set(0, array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.0, -0.5]]).unwrap();
        m.params.set(1, array![[0.1, 0.2]]).unwrap();
        m.params.set(2, array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap();
        let (mu, var) = m.predict_distribution(&Observation::new(vec![4.0, 6.0]), ActionId(1)).unwrap();
        assert_eq!(mu, vec![2.1, 3.0 - 0.5 + 0.2]);
        assert_eq!(var, vec![1.0, 2f64.exp()]);
    }

    #[test]
    fn reparameterised_sample_arithmetic() {
        let mut m = linear_model();
        m.params.set(1, array![[1.0, 2.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Observation::new(vec![0.0, 0.0]);
        let out = m.sample_successor(&s, ActionId(0), Some(&[0.5, -0.5]), &mut rng).unwrap();
        assert_eq!(out, vec![1.5, 1.5]);
        let out = m.sample_successor(&s, ActionId(0), Some(&[0.0, 0.0]), &mut rng).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn logvar_is_clamped() {
        let mut m = linear_model();
        m.params.set(3, array![[100.0, -100.0]]).unwrap();
        let (_, var) = m.predict_distribution(&Observation::new(vec![0.0, 0.0]), ActionId(0)).unwrap();
        assert_eq!(var, vec![LOGVAR_MAX.exp(), LOGVAR_MIN.exp()]);
    }

    #[test]
    fn unit_noise_on_exact_mean_gives_unit_loss() {
        let m = linear_model();
        let mut tape = Tape::new();
        let input = m.encode(array![[0.0, 0.0]].view(), &[0]).unwrap();
        let loss = m
            .loss_tape(&mut tape, input, array![[0.0, 0.0]], array![[1.0, 1.0]])
            .unwrap();
        assert_eq!(tape.scalar(loss), 1.0);
    }

    #[test]
    fn all_successors_follow_action_order_and_collapse_to_means() {
        let mut m = linear_model();
        m.params.set(0, array![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [-1.0, -1.0]]).unwrap();
        m.params.set(3, array![[-10.0, -10.0]]).unwrap();
        let s = Observation::new(vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let all = m.predict_all_successors(&s, &mut rng).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].0, ActionId(0));
        assert!((all[0].1[0] - 1.0).abs() < 0.05);
        assert!((all[1].1[0] + 1.0).abs() < 0.05);
        let again = m.predict_all_successors(&s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = linear_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.model_loss(&[], &mut rng), Err(DynError::EmptyBatch));
        let bad = m.encode(array![[0.0, 0.0]].view(), &[5]);
        assert!(matches!(bad, Err(DynError::InvalidAction { .. })));
    }
}
