use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ModelLoss;
use crate::env::{AnyEnv, Environment};
use crate::ocloud::OCloudConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dqn,
    Dueling,
    Sadq,
    SadqDist,
    QrDqn,
}

impl Variant {
    pub fn uses_model(self) -> bool {
        matches!(self, Self::Sadq | Self::SadqDist)
    }

    pub fn distributional(self) -> bool {
        matches!(self, Self::SadqDist | Self::QrDqn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dqn => "dqn",
            Self::Dueling => "dueling",
            Self::Sadq => "sadq",
            Self::SadqDist => "sadq-dist",
            Self::QrDqn => "qr-dqn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QLoss {
    #[default]
    Mse,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistTarget {
    /// Atomwise convex combination of the two quantile vectors.
    #[default]
    Blend,
    /// Per-atom random choice between the two vectors.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub id: String,
    #[serde(default = "default_bits")]
    pub n_bits: usize,
    #[serde(default)]
    pub ocloud: OCloudConfig,
}

fn default_bits() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSection {
    pub discount: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub update_per_collect: usize,
    /// Environment steps between hard target syncs.
    pub target_update_interval: usize,
    #[serde(default)]
    pub loss: QLoss,
    #[serde(default = "one")]
    pub huber_delta: f64,
    #[serde(default = "yes")]
    pub mean_subtract: bool,
    #[serde(default = "default_atoms")]
    pub atoms: usize,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_atoms() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Model updates per collect block (`k`).
    pub update_per_collect: usize,
    /// Divisor applied to observations before they enter any network.
    pub state_norm: f64,
    #[serde(default)]
    pub loss: ModelLoss,
    /// When set, successor mixing and the action bonus are only used while
    /// the recent mean model loss is below this value.
    #[serde(default)]
    pub loss_gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub dist_target: DistTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub total_steps: u64,
    pub buffer_size: usize,
    pub replay_frequency: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Environment steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Record elapsed seconds in the metrics log. Off by default so logs
    /// of identical runs compare byte for byte.
    #[serde(default)]
    pub record_wall_clock: bool,
}

fn default_eval_interval() -> u64 {
    2000
}

fn default_eval_episodes() -> usize {
    20
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvSection,
    pub q: QSection,
    pub model: ModelSection,
    pub agent: AgentSection,
    pub schedule: ScheduleSection,
}

pub const PRESETS: [&str; 4] = ["cartpole", "acrobot", "bitflip", "ocloud"];

impl TrainConfig {
    /// Built-in configurations for the vector tasks.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let cfg = match name {
            "cartpole" => Self {
                env: env("cartpole"),
                q: q(0.97, vec![128, 128, 64], 64, 1e-3, 1, 8000),
                model: model(vec![256, 256], 128, 4e-5, 20, 1.0),
                agent: agent(0.7, 0.5),
                schedule: schedule(160_000, 100_000, 80, (0.95, 0.1, 10_000), 20),
            },
            "acrobot" => Self {
                env: env("acrobot"),
                q: q(0.99, vec![256, 256], 128, 1e-4, 10, 2400),
                model: model(vec![256, 256], 256, 4e-5, 1, 1.0),
                agent: agent(0.8, 0.5),
                schedule: schedule(960_000, 100_000, 96, (1.0, 0.05, 250_000), 20),
            },
            "bitflip" => Self {
                env: env("bitflip"),
                q: q(0.99, vec![128, 128, 64], 128, 5e-4, 10, 4800),
                model: model(vec![256, 256], 256, 4e-4, 1, 1.0),
                agent: agent(0.6, 0.5),
                schedule: schedule(960_000, 4000, 96, (0.2, 0.2, 100), 50),
            },
            "ocloud" => Self {
                env: env("ocloud"),
                q: q(0.8, vec![64, 64], 32, 5e-5, 1, 2000),
                model: model(vec![64, 64], 64, 5e-4, 1, 50.0),
                agent: agent(0.5, 0.5),
                schedule: schedule(500_000, 100_000, 100, (0.05, 0.05, 10_000), 20),
            },
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` after applying `section.key=value` overrides. Values
    /// are read as TOML literals, falling back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::with_overrides(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn build_env(&self) -> Result<AnyEnv, ConfigError> {
        AnyEnv::from_id(&self.env.id, self.env.n_bits, &self.env.ocloud).map_err(|e| invalid("env.id", e.to_string()))
    }

    /// Transitions required in the buffer before learning starts.
    pub fn learning_starts(&self) -> usize {
        self.q.batch_size.max(self.model.batch_size)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let env = self.build_env()?;
        if env.spec().action_count < 1 {
            return Err(invalid("env.id", "environment has no actions"));
        }
        self.env.ocloud.validate().map_err(|e| invalid("env.ocloud", e.to_string()))?;
        let positive = [
            ("q.batch_size", self.q.batch_size),
            ("q.update_per_collect", self.q.update_per_collect),
            ("q.target_update_interval", self.q.target_update_interval),
            ("q.atoms", self.q.atoms),
            ("model.batch_size", self.model.batch_size),
            ("schedule.buffer_size", self.schedule.buffer_size),
            ("schedule.replay_frequency", self.schedule.replay_frequency),
            ("schedule.eval_episodes", self.schedule.eval_episodes),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        if self.schedule.total_steps == 0 {
            return Err(invalid("schedule.total_steps", "must be at least 1"));
        }
        if self.schedule.eval_interval == 0 {
            return Err(invalid("schedule.eval_interval", "must be at least 1"));
        }
        if self.schedule.epsilon_decay == 0 {
            return Err(invalid("schedule.epsilon_decay", "must be at least 1"));
        }
        if self.schedule.seeds.is_empty() {
            return Err(invalid("schedule.seeds", "needs at least one seed"));
        }
        for (field, hidden) in [("q.hidden", &self.q.hidden), ("model.hidden", &self.model.hidden)] {
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(invalid(field, "needs at least one positive width"));
            }
        }
        for (field, v) in [("q.learning_rate", self.q.learning_rate), ("model.learning_rate", self.model.learning_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !(self.model.state_norm > 0.0 && self.model.state_norm.is_finite()) {
            return Err(invalid("model.state_norm", "must be positive"));
        }
        if !(self.q.huber_delta > 0.0) {
            return Err(invalid("q.huber_delta", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.q.discount) {
            return Err(invalid("q.discount", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.agent.alpha) {
            return Err(invalid("agent.alpha", "must lie in [0, 1]"));
        }
        if !(self.agent.beta >= 0.0 && self.agent.beta.is_finite()) {
            return Err(invalid("agent.beta", "must be non-negative"));
        }
        for (field, v) in [("schedule.epsilon_start", self.schedule.epsilon_start), ("schedule.epsilon_end", self.schedule.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, "must lie in [0, 1]"));
            }
        }
        if let Some(g) = self.model.loss_gate {
            if !(g > 0.0) {
                return Err(invalid("model.loss_gate", "must be positive"));
            }
        }
        Ok(())
    }
}

fn env(id: &str) -> EnvSection {
    EnvSection {
        id: id.to_string(),
        n_bits: 8,
        ocloud: OCloudConfig::default(),
    }
}

fn q(discount: f64, hidden: Vec<usize>, batch_size: usize, learning_rate: f64, upc: usize, sync: usize) -> QSection {
    QSection {
        discount,
        hidden,
        batch_size,
        learning_rate,
        update_per_collect: upc,
        target_update_interval: sync,
        loss: QLoss::Mse,
        huber_delta: 1.0,
        mean_subtract: true,
        atoms: 32,
    }
}

fn model(hidden: Vec<usize>, batch_size: usize, learning_rate: f64, k: usize, state_norm: f64) -> ModelSection {
    ModelSection {
        hidden,
        batch_size,
        learning_rate,
        update_per_collect: k,
        state_norm,
        loss: ModelLoss::Mse,
        loss_gate: None,
    }
}

fn agent(alpha: f64, beta: f64) -> AgentSection {
    AgentSection {
        variant: Variant::Sadq,
        alpha,
        beta,
        dist_target: DistTarget::Blend,
    }
}

fn schedule(total: u64, buffer: usize, freq: usize, eps: (f64, f64, u64), eval_episodes: usize) -> ScheduleSection {
    ScheduleSection {
        total_steps: total,
        buffer_size: buffer,
        replay_frequency: freq,
        epsilon_start: eps.0,
        epsilon_end: eps.1,
        epsilon_decay: eps.2,
        eval_interval: 2000,
        eval_episodes,
        seeds: vec![0],
        checkpoint_interval: 0,
        record_wall_clock: false,
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(spec, "override must look like section.key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(invalid(path, "empty key in override path"));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(path, format!("`{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn from_config(s: &ScheduleSection) -> Self {
        Self {
            start: s.epsilon_start,
            end: s.epsilon_end,
            decay_steps: s.epsilon_decay,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}
