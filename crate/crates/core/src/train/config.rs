use crate::error::{Error, Result};
use crate::model::WtaRule;
use crate::par::Execution;

use super::adam::AdamConfig;

pub const MIN_FRAMES: usize = 2;
pub const MAX_FRAMES: usize = 10;

/// Optimisation settings shared by unsupervised training and fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Frames per training sequence.
    pub frames: usize,
    pub seed: u64,
    pub wta_rule: WtaRule,
    /// Log every n-th update.
    pub log_every: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; off by default.
    pub clip_norm: Option<f64>,
    /// Stop after this many updates in total, even mid-epoch.
    pub max_updates: Option<u64>,
    /// Single stream and zero wall-clock column.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 100,
            frames: 5,
            seed: 0,
            wta_rule: WtaRule::Mask,
            log_every: 1,
            adam: AdamConfig::default(),
            clip_norm: None,
            max_updates: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&self.frames) {
            return Err(Error::config(format!(
                "sequence length {} outside [{MIN_FRAMES}, {MAX_FRAMES}]",
                self.frames
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.adam.validate()
    }

    pub fn execution(&self) -> Execution {
        Execution::from_deterministic(self.deterministic)
    }

    /// Updates in one pass over `len` videos.
    pub fn batches_per_epoch(&self, len: usize) -> u64 {
        len.div_ceil(self.batch_size) as u64
    }

    /// Total update budget over `len` videos.
    pub fn total_updates(&self, len: usize) -> u64 {
        let full = self.epochs as u64 * self.batches_per_epoch(len);
        self.max_updates.unwrap_or(full)
    }
}
