//! The training loop: replay, exploration schedule, learner updates,
//! evaluation, metrics and checkpoints.

mod buffer;
mod checkpoint;
mod config;
mod learner;
mod run;

pub use buffer::{Batch, BufferError, ReplayBuffer, Transition};
pub use checkpoint::CheckpointError;
pub use config::{
    AgentSection, ConfigError, DistTarget, EnvSection, EpsilonSchedule, ModelSection, QLoss, QSection,
    ScheduleSection, TrainConfig, Variant, PRESETS,
};
pub use learner::{LearnError, Learner, QNet, QStats};
pub use run::{
    train_run, Counters, EvalReport, RunArtifacts, RunRngs, TrainError, Trainer, CHECKPOINT_FILE, METRICS_FILE,
    MODEL_LOSS_FILE, Q_LOSS_FILE,
};
