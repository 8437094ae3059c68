//! Loss, optimizer, run configuration, the epoch loop and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod fit;
mod loss;

#[cfg(test)]
mod tests;

pub use adam::AdamState;
pub use checkpoint::{preprocess_hash, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, PRESETS};
pub use fit::{
    eval_threads, evaluate_samples, fit, fit_model, init_model, EpochRecord, EvalOutput, FitOutcome, TrainReport,
};
pub use loss::{cross_entropy, LOG_FLOOR};
