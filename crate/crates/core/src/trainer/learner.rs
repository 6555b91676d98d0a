use ndarray::{Array2, ArrayView2};
use rand::Rng;
use thiserror::Error;

use crate::agent::{
    dqn_target, qr_dqn_target, sadq_action, sadq_dist_target, sadq_dist_target_mixture, sadq_target,
    select_promising_successor, select_promising_successor_dist, AgentError, TargetMix,
};
use crate::dynamics::{standard_normal, DynError, DynModel};
use crate::nn::{
    argmax, atom_means, AdamState, DuelingNet, Mlp, MlpSpec, NnError, ParamSet, QuantileNet, Real, Tape, Var,
};

use super::buffer::Batch;
use super::config::{DistTarget, QLoss, TrainConfig, Variant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] DynError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// The Q-function approximator for each agent variant.
#[derive(Debug, Clone, PartialEq)]
pub enum QNet<F> {
    Plain(Mlp<F>),
    Dueling(DuelingNet<F>),
    Quantile(QuantileNet<F>),
}

impl<F: Real> QNet<F> {
    pub fn build<R: Rng + ?Sized>(cfg: &TrainConfig, obs_dim: usize, action_count: usize, rng: &mut R) -> Self {
        let hidden = &cfg.q.hidden;
        match cfg.agent.variant {
            Variant::Dqn => Self::Plain(Mlp::new(
                MlpSpec {
                    input_dim: obs_dim,
                    hidden_sizes: hidden.clone(),
                    output_dim: action_count,
                    activation: Default::default(),
                },
                rng,
            )),
            Variant::Dueling | Variant::Sadq => {
                Self::Dueling(DuelingNet::new(obs_dim, hidden, action_count, cfg.q.mean_subtract, rng))
            }
            Variant::SadqDist | Variant::QrDqn => {
                Self::Quantile(QuantileNet::new(obs_dim, hidden, action_count, cfg.q.atoms, rng))
            }
        }
    }

    pub fn params(&self) -> &ParamSet<F> {
        match self {
            Self::Plain(n) => &n.params,
            Self::Dueling(n) => &n.params,
            Self::Quantile(n) => &n.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        match self {
            Self::Plain(n) => &mut n.params,
            Self::Dueling(n) => &mut n.params,
            Self::Quantile(n) => &mut n.params,
        }
    }

    /// n x |A| action values (expected returns for quantile nets).
    pub fn q_values(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        match self {
            Self::Plain(n) => n.forward_batch(x),
            Self::Dueling(n) => n.q_values(x),
            Self::Quantile(n) => n.expectations(x),
        }
    }

    /// State values: the value head of a dueling net, otherwise the
    /// greedy action value.
    pub fn state_values(&self, x: ArrayView2<F>) -> Result<Vec<F>, NnError> {
        match self {
            Self::Dueling(n) => Ok(n.state_values(x)?.to_vec()),
            _ => Ok(row_max(&self.q_values(x)?)),
        }
    }

    /// Quantile atoms (n x |A|N); only for quantile nets.
    pub fn atoms(&self, x: ArrayView2<F>) -> Option<Result<Array2<F>, NnError>> {
        match self {
            Self::Quantile(n) => Some(n.atoms_batch(x)),
            _ => None,
        }
    }

    pub fn output_tape(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, NnError> {
        match self {
            Self::Plain(n) => n.forward_tape(tape, x),
            Self::Dueling(n) => n.q_tape(tape, x),
            Self::Quantile(n) => n.atoms_tape(tape, x),
        }
    }
}

pub(crate) fn row_max<F: Real>(q: &Array2<F>) -> Vec<F> {
    q.rows()
        .into_iter()
        .map(|row| row[argmax(row.iter().copied()).expect("non-empty row")])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QStats {
    pub loss: f64,
    /// Population variance of the batch targets (of their means for
    /// distributional variants).
    pub target_variance: f64,
}

/// Online and target Q-networks, the dynamics model and their optimisers.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner<F> {
    pub variant: Variant,
    pub mix: TargetMix,
    pub online: QNet<F>,
    pub target: QNet<F>,
    pub q_adam: AdamState<F>,
    pub model: Option<DynModel<F>>,
    pub model_adam: Option<AdamState<F>>,
    pub q_loss: QLoss,
    pub huber_delta: f64,
    pub dist_target: DistTarget,
    pub action_count: usize,
    pub atoms: usize,
    /// When false, successor mixing and the action bonus are switched off.
    pub gate_open: bool,
}

impl<F: Real> Learner<F> {
    pub fn new<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        cfg: &TrainConfig,
        obs_dim: usize,
        action_count: usize,
        q_rng: &mut R1,
        model_rng: &mut R2,
    ) -> Result<Self, LearnError> {
        let mix = TargetMix::new(cfg.agent.alpha, cfg.agent.beta, cfg.q.discount)?;
        let online = QNet::build(cfg, obs_dim, action_count, q_rng);
        let target = online.clone();
        let q_adam = AdamState::new(online.params(), cfg.q.learning_rate);
        let (model, model_adam) = if cfg.agent.variant.uses_model() {
            let mut m = DynModel::new(obs_dim, action_count, &cfg.model.hidden, cfg.model.state_norm, model_rng);
            m.loss = cfg.model.loss;
            let adam = AdamState::new(&m.params, cfg.model.learning_rate);
            (Some(m), Some(adam))
        } else {
            (None, None)
        };
        Ok(Self {
            variant: cfg.agent.variant,
            mix,
            online,
            target,
            q_adam,
            model,
            model_adam,
            q_loss: cfg.q.loss,
            huber_delta: cfg.q.huber_delta,
            dist_target: cfg.agent.dist_target,
            action_count,
            atoms: cfg.q.atoms,
            gate_open: true,
        })
    }

    fn successor_model(&self) -> Option<&DynModel<F>> {
        if self.gate_open {
            self.model.as_ref()
        } else {
            None
        }
    }

    fn effective_mix(&self) -> TargetMix {
        let mut m = self.mix;
        if self.successor_model().is_none() {
            m.alpha = 1.0;
            m.beta = 0.0;
        }
        m
    }

    pub fn sync_target(&mut self) -> Result<(), NnError> {
        let online = self.online.params().clone();
        self.target.params_mut().copy_from(&online)
    }

    /// Greedy actions for a batch of normalised observations, with the
    /// successor bonus when a model is in use, plus the raw Q-values.
    pub fn act_batch<R: Rng + ?Sized>(&self, x: ArrayView2<F>, rng: &mut R) -> Result<(Vec<usize>, Array2<F>), LearnError> {
        let q = self.online.q_values(x)?;
        let k = self.action_count;
        let actions = match self.successor_model() {
            Some(model) => {
                let succ = model.successors_batch(x, rng)?;
                let v = self.online.state_values(succ.view())?;
                let beta = self.effective_mix().beta;
                q.rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let row = row.to_vec();
                        sadq_action(&row, &v[i * k..(i + 1) * k], beta).map(|a| a.0)
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => q
                .rows()
                .into_iter()
                .map(|row| argmax(row.iter().copied()).expect("non-empty row"))
                .collect(),
        };
        Ok((actions, q))
    }

    /// Bootstrap targets: n x 1 for scalar variants, n x N atoms for
    /// distributional ones.
    pub fn compute_targets<R: Rng + ?Sized>(&self, batch: &Batch<F>, rng: &mut R) -> Result<Array2<F>, LearnError> {
        let n = batch.len();
        let k = self.action_count;
        let mix = self.effective_mix();
        if self.variant.distributional() {
            let nn = self.atoms;
            let next_atoms = self.target.atoms(batch.next_obs.view()).expect("quantile net")?;
            let next_means = atom_means(&next_atoms, k, nn);
            let mut out = Array2::zeros((n, nn));
            let candidates = match self.successor_model() {
                Some(model) => {
                    let succ = model.successors_batch(batch.obs.view(), rng)?;
                    let atoms = self.target.atoms(succ.view()).expect("quantile net")?;
                    let means = atom_means(&atoms, k, nn);
                    Some((atoms, means))
                }
                None => None,
            };
            for i in 0..n {
                let a_next = argmax(next_means.row(i).iter().copied()).expect("actions");
                let z_next: Vec<F> = next_atoms.row(i).iter().skip(a_next * nn).take(nn).copied().collect();
                let (r, done) = (batch.rewards[i], batch.done[i]);
                let row = match &candidates {
                    None => qr_dqn_target(r, mix.gamma, &z_next, done),
                    Some((atoms, means)) => {
                        let block = means.slice(ndarray::s![i * k..(i + 1) * k, ..]);
                        let (c, a) = select_promising_successor_dist(block)?;
                        let z_hat: Vec<F> = atoms.row(i * k + c).iter().skip(a * nn).take(nn).copied().collect();
                        match self.dist_target {
                            DistTarget::Blend => sadq_dist_target(r, &mix, &z_hat, &z_next, done)?,
                            DistTarget::Mixture => sadq_dist_target_mixture(r, &mix, &z_hat, &z_next, done, rng)?,
                        }
                    }
                };
                for (dst, v) in out.row_mut(i).iter_mut().zip(row) {
                    *dst = v;
                }
            }
            return Ok(out);
        }
        let max_next = row_max(&self.target.q_values(batch.next_obs.view())?);
        let mut out = Array2::zeros((n, 1));
        match self.successor_model() {
            Some(model) => {
                let succ = model.successors_batch(batch.obs.view(), rng)?;
                let v = self.target.state_values(succ.view())?;
                for i in 0..n {
                    let (_, v_hat) = select_promising_successor(&v[i * k..(i + 1) * k])?;
                    out[[i, 0]] = sadq_target(batch.rewards[i], &mix, v_hat, max_next[i], batch.done[i]);
                }
            }
            None => {
                for i in 0..n {
                    out[[i, 0]] = dqn_target(batch.rewards[i], mix.gamma, max_next[i], batch.done[i]);
                }
            }
        }
        Ok(out)
    }

    /// Records the Q loss of the online network against fixed targets.
    pub fn q_loss_tape(
        &self,
        tape: &mut Tape<F>,
        obs: Array2<F>,
        actions: &[usize],
        targets: Array2<F>,
    ) -> Result<Var, NnError> {
        let x = tape.constant(obs);
        let out = self.online.output_tape(tape, x)?;
        if self.variant.distributional() {
            let pred = tape.gather_block(out, actions.to_vec(), self.atoms)?;
            let taus = crate::nn::midpoint_fractions(self.atoms);
            return tape.quantile_huber(pred, targets, taus, F::one());
        }
        let pred = tape.gather(out, actions.to_vec())?;
        let t = tape.constant(targets);
        let diff = tape.sub(pred, t)?;
        let per = match self.q_loss {
            QLoss::Mse => tape.square(diff),
            QLoss::Huber => tape.huber(diff, F::lit(self.huber_delta)),
        };
        Ok(tape.mean(per))
    }

    /// One Q-network optimiser step on `batch`.
    pub fn q_update<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Result<QStats, LearnError> {
        let targets = self.compute_targets(batch, rng)?;
        let target_variance = population_variance(targets.rows().into_iter().map(|r| {
            r.iter().map(|v| v.as_f64()).sum::<f64>() / r.len() as f64
        }));
        let mut tape = Tape::new();
        let loss = self.q_loss_tape(&mut tape, batch.obs.clone(), &batch.actions, targets)?;
        let value = tape.scalar(loss).as_f64();
        if value.is_finite() {
            let grads = tape.backward(loss, self.online.params())?;
            self.q_adam.update(self.online.params_mut(), &grads)?;
        }
        Ok(QStats {
            loss: value,
            target_variance,
        })
    }

    /// One model optimiser step on `batch`; returns the loss, or `None`
    /// for variants without a model.
    pub fn model_update<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Result<Option<f64>, LearnError> {
        let (Some(model), Some(adam)) = (self.model.as_mut(), self.model_adam.as_mut()) else {
            return Ok(None);
        };
        let input = model.encode(batch.obs.view(), &batch.actions)?;
        let eps = standard_normal(batch.len(), model.obs_dim, rng);
        let mut tape = Tape::new();
        let loss = model.loss_tape(&mut tape, input, batch.next_obs.clone(), eps)?;
        let value = tape.scalar(loss).as_f64();
        if value.is_finite() {
            let grads = tape.backward(loss, &model.params)?;
            adam.update(&mut model.params, &grads)?;
        }
        Ok(Some(value))
    }
}

pub(crate) fn population_variance(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}
