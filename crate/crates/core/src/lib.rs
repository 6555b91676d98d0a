//! Successor-state aggregation for value-based reinforcement learning.
//!
//! A DQN variant that learns a Gaussian one-step dynamics model, evaluates
//! the model's predicted successor states with the value head, and mixes the
//! best of them into both the bootstrap target and the action selector.
//! Also provides DQN, dueling DQN and QR-DQN baselines, built-in vector
//! environments, an O-Cloud placement simulator and a tabular harness that
//! measures the bias and variance of the mixed target exactly.

pub mod agent;
pub mod diagnostics;
pub mod dynamics;
pub mod env;
pub mod nn;
pub mod ocloud;
pub mod rng;
pub mod trainer;

pub use env::{ActionId, AnyEnv, EnvError, EnvSpec, Environment, Observation, StepResult};
pub use dynamics::{DynError, DynModel, ModelLoss};
pub use trainer::{train_run, RunArtifacts, TrainConfig, TrainError, Trainer};
