//! Optimization: configuration, SGD/Adam updates, the mixed-batch training
//! loop, evaluation helpers and binary checkpoints.

mod checkpoint;
mod config;
mod log;
mod optim;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{OptimizerKind, TrainConfig};
pub use log::{EpochRecord, StepRecord, TrainLog};
pub use optim::{adam_update, sgd_update, OptimizerState};
pub use run::{
    batch_inputs, compute_gradients, continue_training, domain_accuracy, evaluate_segmentation, mean_cross_entropy,
    predict_samples, split_holdout, train_loop, train_step, Gradients,
};
