//! Optimizer, schedule, batching, and the supervised and distillation loops.

mod batching;
mod config;
mod optim;
mod trainer;

pub use batching::{make_batches, pair_cost, BatchStream};
pub use config::{lr_at, TrainConfig};
pub use optim::{clip_factor, Adam, ParamSlot, StepStats};
pub use trainer::{
    distill, finetune, shift_right, teacher_probs, train_supervised, train_supervised_from, LogRecord,
    NoObserver, TrainObserver, TrainState,
};
