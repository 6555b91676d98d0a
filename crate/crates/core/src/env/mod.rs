//! Environment abstraction and the built-in vector environments.
//!
//! Every environment is single-owner and fully determined by the seed passed
//! to [`Environment::reset`] plus the action sequence that follows.

mod acrobot;
mod bitflip;
mod cartpole;

pub use acrobot::Acrobot;
pub use bitflip::BitFlip;
pub use cartpole::CartPole;

use serde::{Deserialize, Serialize};
use std::ops::Deref;
use thiserror::Error;

use crate::ocloud::{OCloud, OCloudConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("action {index} out of range for {count} actions")]
    InvalidAction { index: usize, count: usize },
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("invalid environment parameter: {0}")]
    InvalidParam(String),
}

/// Observation vector in environment units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Observation {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Index of a discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Observation,
    pub reward: f64,
    /// Terminal state reached; the successor has no future value.
    pub done: bool,
    /// Horizon reached without a terminal state; bootstrapping still applies.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_count: usize,
    pub max_steps: usize,
    pub reward_range: (f64, f64),
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode. The same seed always yields the same episode
    /// for the same action sequence.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError>;
}

pub(crate) fn check_action(action: ActionId, count: usize) -> Result<(), EnvError> {
    if action.0 >= count {
        return Err(EnvError::InvalidAction {
            index: action.0,
            count,
        });
    }
    Ok(())
}

/// Environment selected by string id, serializable so that a paused run can
/// be resumed mid-episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnyEnv {
    CartPole(CartPole),
    Acrobot(Acrobot),
    BitFlip(BitFlip),
    OCloud(Box<OCloud>),
}

impl AnyEnv {
    /// Builds an environment from its config id: `cartpole`, `acrobot`,
    /// `bitflip` (uses `n_bits`) or `ocloud`.
    pub fn from_id(id: &str, n_bits: usize, ocloud: &OCloudConfig) -> Result<Self, EnvError> {
        match id {
            "cartpole" => Ok(Self::CartPole(CartPole::new())),
            "acrobot" => Ok(Self::Acrobot(Acrobot::new())),
            "bitflip" => Ok(Self::BitFlip(BitFlip::new(n_bits)?)),
            "ocloud" => Ok(Self::OCloud(Box::new(
                OCloud::new(ocloud.clone()).map_err(|e| EnvError::InvalidParam(e.to_string()))?,
            ))),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    /// Whether the episode that just ended counts as solved. Only BitFlip has
    /// a notion of success distinct from return.
    pub fn solved(&self) -> bool {
        match self {
            Self::BitFlip(b) => b.solved(),
            _ => false,
        }
    }
}

impl Environment for AnyEnv {
    fn spec(&self) -> EnvSpec {
        match self {
            Self::CartPole(e) => e.spec(),
            Self::Acrobot(e) => e.spec(),
            Self::BitFlip(e) => e.spec(),
            Self::OCloud(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            Self::CartPole(e) => e.reset(seed),
            Self::Acrobot(e) => e.reset(seed),
            Self::BitFlip(e) => e.reset(seed),
            Self::OCloud(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        match self {
            Self::CartPole(e) => e.step(action),
            Self::Acrobot(e) => e.step(action),
            Self::BitFlip(e) => e.step(action),
            Self::OCloud(e) => e.step(action),
        }
    }
}
