//! Training recipe: Adam with decoupled weight decay, warmup + cosine
//! schedule, global-norm clipping, per-epoch tile subsampling and
//! best-validation-AUC checkpoint selection.

mod adam;
mod fold;
mod rng;
mod schedule;

pub use adam::{adam_step, clip_gradients, global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use fold::{
    predict_bags, split_metrics, train_fold, write_trace_csv, EpochRecord, FoldResult, SlidePrediction,
};
pub use rng::{stream_rng, subsample_indices, subsample_tiles, Stream};
pub use schedule::lr_at;

use crate::error::{Error, Result};
use crate::models::Aggregator;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub clip_norm: f64,
    /// Tile cap per training step; `None` trains on every tile.
    pub max_tiles: Option<usize>,
    pub seed: u64,
    pub clam_instance_coeff: f64,
    /// Probability threshold for specificity on validation folds.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-4,
            weight_decay: 1e-5,
            epochs: 30,
            warmup_epochs: 3,
            clip_norm: 1.0,
            max_tiles: None,
            seed: 0,
            clam_instance_coeff: 0.3,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// Recipe defaults for an aggregator: attention-pooling models use a
    /// doubled base learning rate.
    pub fn for_aggregator(agg: Aggregator) -> Self {
        let lr_base = match agg {
            Aggregator::TransMil => 1e-4,
            Aggregator::Abmil | Aggregator::ClamSb => 2e-4,
        };
        Self {
            lr_base,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_base > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr_base)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "need epochs >= warmup_epochs and epochs > 0 (epochs {}, warmup {})",
                self.epochs, self.warmup_epochs
            )));
        }
        if self.max_tiles == Some(0) {
            return Err(Error::Config("max_tiles must be at least 1".into()));
        }
        Ok(())
    }
}
