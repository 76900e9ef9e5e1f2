use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Distributed bag of words with interleaved item skip-gram updates.
    PvDbow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    pub min_count: u64,
    pub epochs: usize,
    /// Negative samples per positive example.
    pub negative: usize,
    /// Maximum skip-gram half-window; each position draws an effective
    /// window uniformly from `1..=window`.
    pub window: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub workers: usize,
    pub architecture: Architecture,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        default_config()
    }
}

/// 300 dimensions, `min_count` 1, 70 epochs; k=5, window 5 and a linear
/// learning rate from 0.025 down to 0.0001.
pub fn default_config() -> TrainingConfig {
    TrainingConfig {
        dim: 300,
        min_count: 1,
        epochs: 70,
        negative: 5,
        window: 5,
        lr_start: 0.025,
        lr_end: 0.0001,
        seed: 1,
        workers: 1,
        architecture: Architecture::PvDbow,
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.negative < 1 {
            return bad("negative must be at least 1");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.min_count < 1 {
            return bad("min_count must be at least 1");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        Ok(())
    }
}
