//! Two-site synthetic experiment: baseline TransMIL against TransMIL with the
//! peripheral-distance prior, trained on a site whose interior texture is
//! confounded with the label and scored on a site where it is not.

use crate::bag::{Cohort, LabeledSlide};
use crate::error::Result;
use crate::eval::{cross_validate, eval_external, CvOutcome, ExternalReport};
use crate::io::normalize_attention;
use crate::models::{bag_features, forward, Aggregator, ModelConfig};
use crate::priors::{peripheral_distance, PriorConfig};
use crate::synthetic::{generate_cohort, CohortSpec};
use crate::train::TrainConfig;
use crate::augment_cohort;

pub const TRAIN_SITE: &str = "site-a";
pub const EXTERNAL_SITE: &str = "site-b";

/// Model and optimiser settings sized for a single CPU core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskScale {
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub lr_base: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub max_tiles: Option<usize>,
    pub folds: usize,
    pub threshold: f64,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            n_heads: 2,
            lr_base: 1e-3,
            epochs: 30,
            warmup_epochs: 3,
            max_tiles: Some(64),
            folds: 5,
            threshold: 0.5,
        }
    }
}

impl DeskScale {
    pub fn model_config(&self, input_dim: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            n_heads: self.n_heads,
            seed,
            ..ModelConfig::new(Aggregator::TransMil, input_dim)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr_base: self.lr_base,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            max_tiles: self.max_tiles,
            seed,
            threshold: self.threshold,
            ..TrainConfig::default()
        }
    }
}

/// One model family evaluated internally (cross-validation) and externally.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub name: String,
    /// Augmented internal cohort the arm was trained on.
    pub internal: Cohort,
    pub cv: CvOutcome,
    pub external: ExternalReport,
}

impl ArmResult {
    /// Mean held-out MSI AUC at the selected checkpoints.
    pub fn internal_auc(&self) -> f64 {
        self.cv.report.msi_auc.0
    }

    /// Mean held-out MSI AUC after the final epoch.
    pub fn internal_auc_last(&self) -> f64 {
        self.cv.report.last_msi_auc.0
    }

    /// Mean held-out MSS specificity (MSI head).
    pub fn internal_spec(&self) -> f64 {
        self.cv.report.mss_spec.0
    }

    /// External MSS specificity of the fold ensemble (MSI head).
    pub fn external_spec(&self) -> f64 {
        self.external.mss_spec_msi_head
    }
}

pub fn run_arm(
    internal: &[LabeledSlide],
    external: &[LabeledSlide],
    priors: &PriorConfig,
    desk: &DeskScale,
    seed: u64,
    name: &str,
) -> Result<ArmResult> {
    let internal = augment_cohort(internal, priors)?;
    let external = augment_cohort(external, priors)?;
    let mc = desk.model_config(internal[0].bag.feature_dim, seed);
    let cv = cross_validate(&internal, &mc, &desk.train_config(seed), desk.folds, name)?;
    let external = eval_external(&cv.best_models(), &external, desk.threshold)?;
    Ok(ArmResult {
        name: name.to_string(),
        internal,
        cv,
        external,
    })
}

#[derive(Debug, Clone)]
pub struct SiteShiftRun {
    pub seed: u64,
    pub baseline: ArmResult,
    pub pd: ArmResult,
}

/// Generates both sites from `spec` with the given seed and trains both arms.
pub fn site_shift_run(spec: &CohortSpec, desk: &DeskScale, seed: u64) -> Result<SiteShiftRun> {
    let spec = CohortSpec {
        seed,
        ..spec.clone()
    };
    let internal = generate_cohort(&spec, TRAIN_SITE)?.labeled();
    let external = generate_cohort(&spec.external(), EXTERNAL_SITE)?.labeled();
    Ok(SiteShiftRun {
        seed,
        baseline: run_arm(&internal, &external, &PriorConfig::none(), desk, seed, "TransMIL")?,
        pd: run_arm(&internal, &external, &PriorConfig::pd(), desk, seed, "TransMIL+PD")?,
    })
}

/// Per-slide difference between mean min-max-normalised attention on
/// peripheral-band tiles and on interior tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct BandExcess {
    pub slide_id: String,
    pub msi: bool,
    pub excess: f64,
}

/// Scores every internal slide with the model of the fold that held it
/// out, and measures band-versus-interior attention. Band membership is
/// recomputed from tile coordinates.
pub fn band_attention_excess(arm: &ArmResult, spec: &CohortSpec) -> Result<Vec<BandExcess>> {
    let mut out = Vec::new();
    for (fold, idx) in arm.cv.kfold.folds.iter().enumerate() {
        let model = &arm.cv.fold_results[fold].best;
        for &i in idx {
            let s = &arm.internal[i];
            let attn = normalize_attention(&forward(model, &bag_features(&s.bag)?)?.attention)?;
            let (mut band, mut inner) = ((0.0, 0usize), (0.0, 0usize));
            for (c, a) in s.bag.coords.iter().zip(&attn) {
                let acc = if spec.in_band(peripheral_distance(*c, s.bag.geometry)?) {
                    &mut band
                } else {
                    &mut inner
                };
                acc.0 += a;
                acc.1 += 1;
            }
            if band.1 == 0 || inner.1 == 0 {
                continue;
            }
            out.push(BandExcess {
                slide_id: s.bag.slide_id.clone(),
                msi: s.labels.msi,
                excess: band.0 / band.1 as f64 - inner.0 / inner.1 as f64,
            });
        }
    }
    Ok(out)
}

/// One-sided sign test: probability of at least `k` successes out of `n`
/// fair coin flips.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // Accumulate C(n, i) / 2^n in log space.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut tail = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            tail += (ln_c + ln_half_n).exp();
        }
    }
    tail.min(1.0)
}
