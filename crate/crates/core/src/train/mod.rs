//! Adam, backpropagation-through-time training, supervised fine-tuning and
//! checkpoints.

mod adam;
mod checkpoint;
mod config;
mod finetune;
mod metrics;
mod unsupervised;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{TrainConfig, MAX_FRAMES, MIN_FRAMES};
pub use finetune::{
    accuracy, argmax, finetune_supervised, predict_classes, predict_scores, with_head,
    EpochAccuracy, FinetuneLog, FinetuneRun,
};
pub use metrics::{MetricsLog, MetricsRow, METRICS_HEADER};
pub use unsupervised::{batch_loss_and_grads, train_unsupervised, TrainError, TrainRun};

#[cfg(test)]
mod tests;
