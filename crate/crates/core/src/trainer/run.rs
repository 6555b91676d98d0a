use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::epsilon_greedy;
use crate::diagnostics::{q_discrepancy, DiagError, MetricsRow, MetricsWriter};
use crate::env::{ActionId, AnyEnv, EnvError, Environment, Observation};
use crate::nn::NnError;
use crate::rng::{stream, Stream};

use super::buffer::{BufferError, ReplayBuffer, Transition};
use super::checkpoint::CheckpointError;
use super::config::{ConfigError, EpsilonSchedule, TrainConfig};
use super::learner::{LearnError, Learner};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Diagnostics(#[from] DiagError),
    #[error("non-finite {what} loss at env step {env_steps}, gradient step {grad_steps}: {diagnostic}")]
    NonFiniteLoss {
        what: &'static str,
        env_steps: u64,
        grad_steps: u64,
        diagnostic: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        Self::Learn(e.into())
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRngs {
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub q_batch: ChaCha8Rng,
    pub model_batch: ChaCha8Rng,
    pub model_noise: ChaCha8Rng,
    pub act_noise: ChaCha8Rng,
    pub eval: ChaCha8Rng,
    pub target_noise: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, Stream::Env),
            explore: stream(seed, Stream::Explore),
            q_batch: stream(seed, Stream::QBatch),
            model_batch: stream(seed, Stream::ModelBatch),
            model_noise: stream(seed, Stream::ModelNoise),
            act_noise: stream(seed, Stream::ActNoise),
            eval: stream(seed, Stream::Eval),
            target_noise: stream(seed, Stream::TargetNoise),
        }
    }
}

/// Step accounting; the `next_*` fields are environment-step thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub model_steps: u64,
    pub episodes: u64,
    pub next_eval: u64,
    pub next_sync: u64,
}

/// Running sums since the last metrics row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Accum {
    pub q_loss: f64,
    pub q_count: u64,
    pub model_loss: f64,
    pub model_count: u64,
    pub target_var: f64,
    pub target_var_count: u64,
}

fn mean_or_nan(sum: f64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Outcome of a batch of greedy evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
    /// Mean `max - min` action value over visited states.
    pub q_discrepancy: f64,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / self.returns.len() as f64).sqrt()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes.iter().filter(|&&s| s).count() as f64 / self.successes.len() as f64
    }
}

/// A single training run, advanced one collect/train cycle at a time.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub(crate) env: AnyEnv,
    pub learner: Learner<f32>,
    pub buffer: ReplayBuffer,
    pub(crate) rngs: RunRngs,
    pub(crate) obs: Option<Observation>,
    pub counters: Counters,
    pub(crate) accum: Accum,
    pub metrics: Vec<MetricsRow>,
    pub q_losses: Vec<f64>,
    pub model_losses: Vec<f64>,
    pub last_eval: Option<EvalReport>,
    pub(crate) wall_offset: f64,
    started: Instant,
    writer: Option<MetricsWriter>,
    schedule: EpsilonSchedule,
    obs_dim: usize,
    action_count: usize,
}

const GATE_WINDOW: usize = 100;

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let env = config.build_env()?;
        let spec = env.spec();
        let mut q_rng = stream(seed, Stream::InitQ);
        let mut m_rng = stream(seed, Stream::InitModel);
        let learner = Learner::new(&config, spec.obs_dim, spec.action_count, &mut q_rng, &mut m_rng)?;
        let counters = Counters {
            env_steps: 0,
            grad_steps: 0,
            model_steps: 0,
            episodes: 0,
            next_eval: config.schedule.eval_interval,
            next_sync: config.q.target_update_interval as u64,
        };
        Ok(Self {
            schedule: EpsilonSchedule::from_config(&config.schedule),
            buffer: ReplayBuffer::new(config.schedule.buffer_size, spec.obs_dim),
            rngs: RunRngs::new(seed),
            obs: None,
            counters,
            accum: Accum::default(),
            metrics: Vec::new(),
            q_losses: Vec::new(),
            model_losses: Vec::new(),
            last_eval: None,
            wall_offset: 0.0,
            started: Instant::now(),
            writer: None,
            obs_dim: spec.obs_dim,
            action_count: spec.action_count,
            config,
            seed,
            env,
            learner,
        })
    }

    /// Streams every subsequent metrics row to `writer`.
    pub fn attach_writer(&mut self, writer: MetricsWriter) {
        self.writer = Some(writer);
    }

    pub fn finished(&self) -> bool {
        self.counters.env_steps >= self.config.schedule.total_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.at(self.counters.env_steps)
    }

    fn norm(&self) -> f64 {
        self.config.model.state_norm
    }

    fn row_of(&self, obs: &[f64]) -> Array2<f32> {
        let n = self.norm();
        Array2::from_shape_fn((1, obs.len()), |(_, c)| (obs[c] / n) as f32)
    }

    fn collect_step(&mut self) -> Result<(), TrainError> {
        let obs = match self.obs.take() {
            Some(o) => o,
            None => {
                let seed: u64 = self.rngs.env.random();
                self.env.reset(seed)
            }
        };
        let action = if self.buffer.len() < self.config.learning_starts() {
            ActionId(self.rngs.explore.random_range(0..self.action_count))
        } else {
            let x = self.row_of(&obs);
            let (greedy, _) = self.learner.act_batch(x.view(), &mut self.rngs.act_noise)?;
            let eps = self.epsilon();
            epsilon_greedy(ActionId(greedy[0]), eps, self.action_count, &mut self.rngs.explore)
        };
        let step = self.env.step(action)?;
        let over = step.episode_over();
        self.buffer.push(&Transition {
            s: obs,
            a: action,
            r: step.reward,
            s_next: step.next_obs.clone(),
            done: step.done,
            truncated: step.truncated,
        })?;
        self.counters.env_steps += 1;
        if over {
            self.counters.episodes += 1;
        } else {
            self.obs = Some(step.next_obs);
        }
        Ok(())
    }

    fn non_finite(&self, what: &'static str, loss: f64) -> TrainError {
        let diagnostic = serde_json::json!({
            "loss": loss.to_string(),
            "q_params_finite": self.learner.online.params().all_finite(),
            "model_params_finite": self.learner.model.as_ref().map(|m| m.params.all_finite()),
            "buffer_len": self.buffer.len(),
            "model_steps": self.counters.model_steps,
            "recent_q_losses": self.q_losses.iter().rev().take(5).collect::<Vec<_>>(),
            "recent_model_losses": self.model_losses.iter().rev().take(5).collect::<Vec<_>>(),
        });
        TrainError::NonFiniteLoss {
            what,
            env_steps: self.counters.env_steps,
            grad_steps: self.counters.grad_steps,
            diagnostic: diagnostic.to_string(),
        }
    }

    fn update_gate(&mut self) {
        if let Some(limit) = self.config.model.loss_gate {
            let recent: Vec<f64> = self.model_losses.iter().rev().take(GATE_WINDOW).copied().collect();
            self.learner.gate_open = !recent.is_empty() && recent.iter().sum::<f64>() / (recent.len() as f64) < limit;
        }
    }

    fn train_phase(&mut self) -> Result<(), TrainError> {
        let norm = self.norm();
        if self.learner.model.is_some() {
            for _ in 0..self.config.model.update_per_collect {
                let idx = self.buffer.sample_indices(self.config.model.batch_size, &mut self.rngs.model_batch)?;
                let batch = self.buffer.batch::<f32>(&idx, norm);
                let loss = self
                    .learner
                    .model_update(&batch, &mut self.rngs.model_noise)?
                    .expect("model present");
                if !loss.is_finite() {
                    return Err(self.non_finite("model", loss));
                }
                self.counters.model_steps += 1;
                self.model_losses.push(loss);
                self.accum.model_loss += loss;
                self.accum.model_count += 1;
            }
        }
        self.update_gate();
        for _ in 0..self.config.q.update_per_collect {
            let idx = self.buffer.sample_indices(self.config.q.batch_size, &mut self.rngs.q_batch)?;
            let batch = self.buffer.batch::<f32>(&idx, norm);
            let stats = self.learner.q_update(&batch, &mut self.rngs.target_noise)?;
            if !stats.loss.is_finite() {
                return Err(self.non_finite("q", stats.loss));
            }
            self.counters.grad_steps += 1;
            self.q_losses.push(stats.loss);
            self.accum.q_loss += stats.loss;
            self.accum.q_count += 1;
            if stats.target_variance.is_finite() {
                self.accum.target_var += stats.target_variance;
                self.accum.target_var_count += 1;
            }
        }
        Ok(())
    }

    /// Collects one block of environment steps, trains on it, syncs the
    /// target network and evaluates when an interval boundary is crossed.
    /// Returns whether an evaluation ran.
    pub fn run_cycle(&mut self) -> Result<bool, TrainError> {
        if self.finished() {
            return Ok(false);
        }
        let remaining = self.config.schedule.total_steps - self.counters.env_steps;
        let block = (self.config.schedule.replay_frequency as u64).min(remaining);
        for _ in 0..block {
            self.collect_step()?;
        }
        if self.buffer.len() >= self.config.learning_starts() {
            self.train_phase()?;
        }
        let interval = self.config.q.target_update_interval as u64;
        while self.counters.env_steps >= self.counters.next_sync {
            self.learner.sync_target()?;
            self.counters.next_sync += interval;
        }
        let due = self.counters.env_steps >= self.counters.next_eval;
        let final_row = self.finished() && self.metrics.last().is_none_or(|r| r.env_steps != self.counters.env_steps);
        if due || final_row {
            while self.counters.env_steps >= self.counters.next_eval {
                self.counters.next_eval += self.config.schedule.eval_interval;
            }
            self.record_row()?;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn run_to_end(&mut self) -> Result<(), TrainError> {
        while !self.finished() {
            self.run_cycle()?;
        }
        Ok(())
    }

    fn record_row(&mut self) -> Result<(), TrainError> {
        let report = self.evaluate()?;
        let wall_clock = self.elapsed_total();
        let a = std::mem::take(&mut self.accum);
        let row = MetricsRow {
            wall_clock,
            env_steps: self.counters.env_steps,
            grad_steps: self.counters.grad_steps,
            model_steps: self.counters.model_steps,
            eval_return_mean: report.mean(),
            eval_return_std: report.std(),
            q_loss: mean_or_nan(a.q_loss, a.q_count),
            model_loss: mean_or_nan(a.model_loss, a.model_count),
            epsilon: self.epsilon(),
            q_discrepancy: report.q_discrepancy,
            target_variance_estimate: mean_or_nan(a.target_var, a.target_var_count),
        };
        if let Some(w) = self.writer.as_mut() {
            w.write_row(&row)?;
        }
        self.metrics.push(row);
        self.last_eval = Some(report);
        Ok(())
    }

    /// Runs the configured number of greedy episodes in lockstep on fresh
    /// environments. Exploration is off; the successor bonus stays active.
    /// Nothing is written to the replay buffer.
    pub fn evaluate(&mut self) -> Result<EvalReport, TrainError> {
        let n = self.config.schedule.eval_episodes;
        let mut envs: Vec<AnyEnv> = (0..n).map(|_| self.config.build_env()).collect::<Result<_, _>>()?;
        let mut obs: Vec<Observation> = envs
            .iter_mut()
            .map(|e| {
                let seed: u64 = self.rngs.eval.random();
                e.reset(seed)
            })
            .collect();
        let mut active = vec![true; n];
        let mut returns = vec![0.0; n];
        let mut successes = vec![false; n];
        let (mut disc_sum, mut disc_n) = (0.0, 0usize);
        let norm = self.norm();
        loop {
            let live: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
            if live.is_empty() {
                break;
            }
            let x = Array2::from_shape_fn((live.len(), self.obs_dim), |(r, c)| (obs[live[r]][c] / norm) as f32);
            let (actions, q) = self.learner.act_batch(x.view(), &mut self.rngs.eval)?;
            for (r, &i) in live.iter().enumerate() {
                let qv: Vec<f64> = q.row(r).iter().map(|&v| v as f64).collect();
                disc_sum += q_discrepancy(&qv)?;
                disc_n += 1;
                let step = envs[i].step(ActionId(actions[r]))?;
                returns[i] += step.reward;
                if step.episode_over() {
                    active[i] = false;
                    successes[i] = step.done && envs[i].solved();
                } else {
                    obs[i] = step.next_obs;
                }
            }
        }
        Ok(EvalReport {
            returns,
            successes,
            q_discrepancy: mean_or_nan(disc_sum, disc_n as u64),
        })
    }

    /// Seconds trained so far, or NaN when wall-clock recording is off so
    /// that checkpoints stay byte-reproducible.
    pub(crate) fn elapsed_total(&self) -> f64 {
        if self.config.schedule.record_wall_clock {
            self.wall_offset + self.started.elapsed().as_secs_f64()
        } else {
            f64::NAN
        }
    }

    pub(crate) fn restart_clock(&mut self, offset: f64) {
        self.wall_offset = offset;
        self.started = Instant::now();
    }
}

/// Paths and headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub q_losses: PathBuf,
    pub model_losses: PathBuf,
    pub final_eval_return: f64,
    pub best_eval_return: f64,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const Q_LOSS_FILE: &str = "q_loss.csv";
pub const MODEL_LOSS_FILE: &str = "model_loss.csv";

fn write_losses(path: &Path, losses: &[f64]) -> Result<(), TrainError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "update,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, crate::diagnostics::metrics::format_value(*l))?;
    }
    out.flush()?;
    Ok(())
}

/// Trains `config` with `seed` into `out_dir`, writing the metrics log,
/// per-update loss logs and checkpoints. With `resume`, training continues
/// from a checkpoint and the metrics log is appended to.
pub fn train_run(config: &TrainConfig, seed: u64, out_dir: &Path, resume: Option<&Path>) -> Result<RunArtifacts, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let metrics = out_dir.join(METRICS_FILE);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut trainer = match resume {
        Some(path) => {
            let t = Trainer::load(path)?;
            t.truncate_metrics_file(&metrics)?;
            t
        }
        None => {
            MetricsWriter::create(&metrics)?;
            Trainer::new(config.clone(), seed)?
        }
    };
    trainer.attach_writer(MetricsWriter::append(&metrics)?);
    let every = trainer.config.schedule.checkpoint_interval;
    let mut next_ckpt = if every == 0 {
        u64::MAX
    } else {
        (trainer.counters.env_steps / every + 1) * every
    };
    let result = (|| {
        while !trainer.finished() {
            trainer.run_cycle()?;
            if trainer.counters.env_steps >= next_ckpt {
                trainer.save(&checkpoint)?;
                next_ckpt += every;
            }
        }
        Ok::<(), TrainError>(())
    })();
    if let Err(TrainError::NonFiniteLoss { diagnostic, .. }) = &result {
        std::fs::write(out_dir.join("nonfinite_dump.json"), diagnostic)?;
    }
    result?;
    trainer.save(&checkpoint)?;
    let q_losses = out_dir.join(Q_LOSS_FILE);
    let model_losses = out_dir.join(MODEL_LOSS_FILE);
    write_losses(&q_losses, &trainer.q_losses)?;
    write_losses(&model_losses, &trainer.model_losses)?;
    let returns: Vec<f64> = trainer.metrics.iter().map(|r| r.eval_return_mean).collect();
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        metrics,
        checkpoint,
        q_losses,
        model_losses,
        final_eval_return: returns.last().copied().unwrap_or(f64::NAN),
        best_eval_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
