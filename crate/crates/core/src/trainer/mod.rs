//! Backpropagation through time with Adam, learning-rate schedules,
//! classification losses and checkpoints.

pub mod checkpoint;
mod loss;
mod optim;
mod schedule;
mod train;

pub use loss::{classification_loss, one_hot, LossKind};
pub use optim::{adam_step, clip_global_norm, AdamState};
pub use schedule::{cosine, Scheduler};
pub use train::{evaluate, train, EvalResult, MetricsLog, MetricsRow, TrainConfig, TrainReport};
