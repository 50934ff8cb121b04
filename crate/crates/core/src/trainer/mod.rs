//! Training of the proxy-pretrained backbone, the two progressive-resizing
//! stages and the two baselines, plus per-patch inference.

mod data;
mod fit;
mod predict;
mod stages;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{standardize, PatchMeta, PatchSet, RunSplit};
pub use fit::{accuracy, fit, TrainLog};
pub use predict::{predict_patches, read_predictions, write_predictions, PatchPrediction};
pub use stages::{
    pretrain_backbone, train_baseline, train_stage1, train_stage2, BaselineKind, StageOutput,
};

fn default_momentum() -> f64 {
    0.9
}

fn default_decay_fraction() -> f64 {
    2.0 / 3.0
}

fn default_decay_factor() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Optimization settings of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Epoch index `floor(fraction · epochs)` and later train at
    /// `lr · lr_decay_factor`.
    #[serde(default = "default_decay_fraction")]
    pub lr_decay_fraction: f64,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub seed: u64,
    /// Downscale level of the patches this stage consumes.
    pub level: usize,
    /// Cap on patches drawn per slide in each epoch (fresh draw every epoch).
    #[serde(default)]
    pub max_patches_per_slide: Option<usize>,
    /// Class-balanced resampling of each epoch's patches.
    #[serde(default)]
    pub weighted_sampling: bool,
    /// Keep transferred layers fixed and train only new ones.
    #[serde(default)]
    pub freeze_transferred: bool,
    /// Return the weights of the best validation epoch.
    #[serde(default = "default_true")]
    pub select_on_val: bool,
}

impl TrainConfig {
    /// Desk-scale defaults: SGD momentum 0.9, lr 0.01 decayed ×0.1 at 2/3 of
    /// 30 epochs, batch 32.
    pub fn desk(level: usize) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            momentum: default_momentum(),
            lr_decay_fraction: default_decay_fraction(),
            lr_decay_factor: default_decay_factor(),
            seed: 0,
            level,
            max_patches_per_slide: None,
            weighted_sampling: false,
            freeze_transferred: false,
            select_on_val: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_decay_factor > 0.0) || !(0.0..=1.0).contains(&self.lr_decay_fraction) {
            return Err(Error::Validation("lr decay needs factor > 0 and fraction in [0, 1]".into()));
        }
        if self.max_patches_per_slide == Some(0) {
            return Err(Error::Validation("max_patches_per_slide must be positive".into()));
        }
        if self.level == 0 {
            return Err(Error::Validation("level must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decay_from = (self.lr_decay_fraction * self.epochs as f64).floor() as usize;
        if self.lr_decay_fraction < 1.0 && epoch >= decay_from {
            self.lr * self.lr_decay_factor
        } else {
            self.lr
        }
    }
}

/// Index of the first maximum.
pub(crate) fn argmax<T: PartialOrd>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::desk(4);
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(19), 0.01);
        assert!((cfg.lr_at(20) - 0.001).abs() < 1e-15);
        let mut none = cfg.clone();
        none.lr_decay_fraction = 1.0;
        assert_eq!(none.lr_at(29), 0.01);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk(2);
        c.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk(2);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::desk(2).validate().is_ok());
    }

    #[test]
    fn first_max_tie_break() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
