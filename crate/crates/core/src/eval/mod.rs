//! Slide-level metrics, stratified cross-validation and external-cohort
//! evaluation.

mod folds;
mod metrics;
mod report;

pub use folds::{stratified_kfold, KFold};
pub use metrics::{mean_std, roc_auc, specificity, specificity_from_probs};
pub use report::{
    cross_validate, ensemble_probabilities, eval_external, CvOutcome, ExternalReport,
    ExternalSlide, FoldMetrics, MetricsReport, ModelExternalMetrics,
};
