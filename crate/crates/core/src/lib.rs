//! Spatial priors for multiple-instance learning over whole-slide tile bags.
//!
//! Tiles carry coordinates, foundation-model features and optional tissue
//! probe probabilities. [`priors`] turns coordinates into per-tile scalars
//! (peripheral distance, local immune neighbourhood) that are appended to
//! the features; [`models`] aggregates bags with ABMIL, CLAM-SB or TransMIL
//! on a small reverse-mode engine ([`tensor`]); [`train`] and [`eval`]
//! implement the training recipe and the cross-validation / external-site
//! protocol; [`synthetic`] generates cohorts with a planted spatial signal.

pub mod bag;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod models;
pub mod priors;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use bag::{Cohort, LabeledSlide, Labels, ProbeProbs, SlideBag, SlideGeometry, TileCoord};
pub use error::{Error, ErrorKind, Result};
pub use models::{Aggregator, BagOutput, ModelConfig, ModelParams};
pub use priors::{augment_features, PriorConfig};
pub use train::TrainConfig;

/// Applies the prior configuration to every slide of a cohort.
pub fn augment_cohort(cohort: &[LabeledSlide], cfg: &PriorConfig) -> Result<Cohort> {
    cohort
        .iter()
        .map(|s| {
            Ok(LabeledSlide {
                bag: augment_features(&s.bag, cfg)?,
                labels: s.labels,
                site: s.site.clone(),
            })
        })
        .collect()
}
