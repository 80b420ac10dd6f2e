use std::fmt::Write as _;
use std::path::Path;

use super::{mean_std, roc_auc, specificity_from_probs, stratified_kfold, KFold};
use crate::bag::LabeledSlide;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams};
use crate::tensor::sigmoid;
use crate::train::{predict_bags, split_metrics, train_fold, FoldResult, TrainConfig};

/// Held-out metrics for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_val: usize,
    pub n_val_msi: usize,
    pub best_epoch: usize,
    pub msi_auc: f64,
    pub hyper_auc: f64,
    /// MSS slides whose MSI probability is below threshold.
    pub mss_spec_msi_head: f64,
    /// MSS slides whose MSS probability exceeds `1 - threshold`.
    pub mss_spec_mss_head: f64,
    pub last_msi_auc: f64,
    pub last_hyper_auc: f64,
    pub last_mss_spec: f64,
}

/// One slide's external prediction, ensemble-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSlide {
    pub slide_id: String,
    pub msi: bool,
    pub hypermut: bool,
    pub msi_prob: f64,
    pub mss_prob: f64,
    pub hyper_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelExternalMetrics {
    pub mss_spec_msi_head: f64,
    pub mss_spec_mss_head: f64,
}

/// External-cohort evaluation without retraining.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalReport {
    pub n_slides: usize,
    pub n_msi: usize,
    pub threshold: f64,
    pub mss_spec_msi_head: f64,
    pub mss_spec_mss_head: f64,
    pub msi_auc: Option<f64>,
    pub msi_auc_note: Option<String>,
    pub hyper_auc: Option<f64>,
    pub per_model: Vec<ModelExternalMetrics>,
    pub slides: Vec<ExternalSlide>,
}

/// Cross-validation summary; standard deviations use denominator k.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub name: String,
    pub threshold: f64,
    pub folds: Vec<FoldMetrics>,
    pub msi_auc: (f64, f64),
    pub hyper_auc: (f64, f64),
    pub mss_spec: (f64, f64),
    pub last_msi_auc: (f64, f64),
    pub warnings: Vec<String>,
    pub external: Option<ExternalReport>,
}

impl MetricsReport {
    /// Aggregates per-fold rows into mean and population std.
    pub fn from_folds(name: impl Into<String>, threshold: f64, folds: Vec<FoldMetrics>) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            name: name.into(),
            threshold,
            msi_auc: col(|f| f.msi_auc),
            hyper_auc: col(|f| f.hyper_auc),
            mss_spec: col(|f| f.mss_spec_msi_head),
            last_msi_auc: col(|f| f.last_msi_auc),
            folds,
            warnings: Vec::new(),
            external: None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# std: population (denominator k)\n");
        out.push_str(
            "row,fold,best_epoch,n_val,n_val_msi,msi_auc,hyper_auc,mss_spec_msi_head,\
             mss_spec_mss_head,last_msi_auc,last_hyper_auc,last_mss_spec\n",
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "fold,{},{},{},{},{},{},{},{},{},{},{}",
                f.fold,
                f.best_epoch,
                f.n_val,
                f.n_val_msi,
                fmt(f.msi_auc),
                fmt(f.hyper_auc),
                fmt(f.mss_spec_msi_head),
                fmt(f.mss_spec_mss_head),
                fmt(f.last_msi_auc),
                fmt(f.last_hyper_auc),
                fmt(f.last_mss_spec)
            );
        }
        type Col = fn(&FoldMetrics) -> f64;
        let cols: [Col; 7] = [
            |f| f.msi_auc,
            |f| f.hyper_auc,
            |f| f.mss_spec_msi_head,
            |f| f.mss_spec_mss_head,
            |f| f.last_msi_auc,
            |f| f.last_hyper_auc,
            |f| f.last_mss_spec,
        ];
        let stats: Vec<(f64, f64)> = cols
            .iter()
            .map(|c| mean_std(&self.folds.iter().map(c).collect::<Vec<_>>()))
            .collect();
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let vals: Vec<String> = stats
                .iter()
                .map(|s| fmt(if pick == 0 { s.0 } else { s.1 }))
                .collect();
            let _ = writeln!(out, "{label},,,,,{}", vals.join(","));
        }
        out
    }

    /// Human-readable table row in the usual `mean ± std` layout.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>18} {:>18} {:>18}",
            "Configuration", "Internal MSI AUC", "Hyper AUC", "External MSS Spec"
        );
        let ext = self
            .external
            .as_ref()
            .map_or("-".to_string(), |e| format!("{:.3}", e.mss_spec_msi_head));
        let _ = writeln!(
            out,
            "{:<24} {:>18} {:>18} {:>18}",
            self.name,
            pm(self.msi_auc),
            pm(self.hyper_auc),
            ext
        );
        let _ = writeln!(
            out,
            "internal MSS specificity (MSI head, threshold {}): {}",
            self.threshold,
            pm(self.mss_spec)
        );
        let _ = writeln!(out, "last-epoch internal MSI AUC: {}", pm(self.last_msi_auc));
        let _ = writeln!(out, "std uses the population denominator (k folds)");
        if let Some(e) = &self.external {
            out.push_str(&e.summary());
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(summary_path, self.summary()).map_err(|e| Error::io(summary_path, e))
    }
}

impl ExternalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "n_slides,{}", self.n_slides);
        let _ = writeln!(out, "n_msi,{}", self.n_msi);
        let _ = writeln!(out, "threshold,{}", self.threshold);
        let _ = writeln!(out, "mss_spec_msi_head,{}", fmt(self.mss_spec_msi_head));
        let _ = writeln!(out, "mss_spec_mss_head,{}", fmt(self.mss_spec_mss_head));
        let _ = writeln!(out, "msi_auc,{}", self.msi_auc.map_or("NaN".into(), fmt));
        let _ = writeln!(out, "msi_auc_note,{}", self.msi_auc_note.as_deref().unwrap_or(""));
        let _ = writeln!(out, "hyper_auc,{}", self.hyper_auc.map_or("NaN".into(), fmt));
        for (i, m) in self.per_model.iter().enumerate() {
            let _ = writeln!(out, "model{}_mss_spec_msi_head,{}", i + 1, fmt(m.mss_spec_msi_head));
            let _ = writeln!(out, "model{}_mss_spec_mss_head,{}", i + 1, fmt(m.mss_spec_mss_head));
        }
        out
    }

    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("slide_id,msi,hypermut,msi_prob,mss_prob,hyper_prob\n");
        for s in &self.slides {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.slide_id,
                s.msi as u8,
                s.hypermut as u8,
                fmt(s.msi_prob),
                fmt(s.mss_prob),
                fmt(s.hyper_prob)
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "external cohort: {} slides ({} MSI-H), ensemble of {} models",
            self.n_slides,
            self.n_msi,
            self.per_model.len()
        );
        let _ = writeln!(
            out,
            "  MSS specificity, MSI head (P(MSI) < {}): {:.3}",
            self.threshold, self.mss_spec_msi_head
        );
        let _ = writeln!(
            out,
            "  MSS specificity, MSS head (P(MSS) > {}): {:.3}",
            1.0 - self.threshold,
            self.mss_spec_mss_head
        );
        match (self.msi_auc, &self.msi_auc_note) {
            (Some(a), Some(n)) => {
                let _ = writeln!(out, "  MSI AUC: {a:.3} ({n})");
            }
            (Some(a), None) => {
                let _ = writeln!(out, "  MSI AUC: {a:.3}");
            }
            (None, n) => {
                let _ = writeln!(out, "  MSI AUC: n/a ({})", n.as_deref().unwrap_or("undefined"));
            }
        }
        for (i, m) in self.per_model.iter().enumerate() {
            let _ = writeln!(
                out,
                "  model {}: MSS spec MSI head {:.3}, MSS head {:.3}",
                i + 1,
                m.mss_spec_msi_head,
                m.mss_spec_mss_head
            );
        }
        out
    }
}

pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn pm((m, s): (f64, f64)) -> String {
    format!("{m:.3} ± {s:.3}")
}

fn or_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Everything produced by [`cross_validate`].
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub kfold: KFold,
    pub fold_results: Vec<FoldResult>,
}

impl CvOutcome {
    pub fn best_models(&self) -> Vec<ModelParams> {
        self.fold_results.iter().map(|f| f.best.clone()).collect()
    }
}

fn check_dims(cohort: &[LabeledSlide], input_dim: usize) -> Result<()> {
    for s in cohort {
        if s.bag.feature_dim != input_dim {
            return Err(Error::Config(format!(
                "slide {} has feature dimension {}, model expects {input_dim}",
                s.bag.slide_id, s.bag.feature_dim
            )));
        }
    }
    Ok(())
}

/// Stratified k-fold training and held-out evaluation. Fold `f` trains with
/// model seed `model_cfg.seed + f`.
pub fn cross_validate(
    cohort: &[LabeledSlide],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
    name: &str,
) -> Result<CvOutcome> {
    check_dims(cohort, model_cfg.input_dim)?;
    let labels: Vec<bool> = cohort.iter().map(|s| s.labels.msi).collect();
    let kfold = stratified_kfold(&labels, k, train_cfg.seed)?;
    let mut rows = Vec::with_capacity(k);
    let mut results = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<LabeledSlide> = kfold
            .train_indices(f)
            .into_iter()
            .map(|i| cohort[i].clone())
            .collect();
        let val: Vec<LabeledSlide> = kfold.folds[f].iter().map(|&i| cohort[i].clone()).collect();
        let mut mc = *model_cfg;
        mc.seed = model_cfg.seed.wrapping_add(f as u64);
        let result = train_fold(&train, &val, &mc, train_cfg, f as u64)?;
        let preds = predict_bags(&result.best, &val)?;
        let (msi_auc, spec, hyper_auc) = split_metrics(&preds, train_cfg.threshold)?;
        let not_mss: Vec<f64> = preds.iter().map(|p| 1.0 - sigmoid(p.output.logits[1])).collect();
        let msi_l: Vec<bool> = preds.iter().map(|p| p.labels.msi).collect();
        let last = result.last_record();
        rows.push(FoldMetrics {
            fold: f + 1,
            n_val: val.len(),
            n_val_msi: msi_l.iter().filter(|&&l| l).count(),
            best_epoch: result.best_epoch,
            msi_auc,
            hyper_auc,
            mss_spec_msi_head: spec,
            mss_spec_mss_head: or_nan(specificity_from_probs(&not_mss, &msi_l, train_cfg.threshold))?,
            last_msi_auc: last.val_msi_auc,
            last_hyper_auc: last.val_hyper_auc,
            last_mss_spec: last.val_mss_spec,
        });
        results.push(result);
    }
    let mut report = MetricsReport::from_folds(name, train_cfg.threshold, rows);
    report.warnings = kfold.warnings.clone();
    Ok(CvOutcome {
        report,
        kfold,
        fold_results: results,
    })
}

/// Mean sigmoid probability per head over an ensemble of models.
pub fn ensemble_probabilities(models: &[ModelParams], slide: &LabeledSlide) -> Result<[f64; 3]> {
    if models.is_empty() {
        return Err(Error::InvalidInput("empty model ensemble".into()));
    }
    let x = crate::models::bag_features(&slide.bag)?;
    let mut acc = [0.0; 3];
    for m in models {
        let out = crate::models::forward(m, &x)?;
        for (a, z) in acc.iter_mut().zip(out.logits) {
            *a += sigmoid(z);
        }
    }
    Ok(acc.map(|a| a / models.len() as f64))
}

/// Scores an external cohort with already-trained models.
pub fn eval_external(
    models: &[ModelParams],
    cohort: &[LabeledSlide],
    threshold: f64,
) -> Result<ExternalReport> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidInput("no models to evaluate".into()))?;
    for m in models {
        if m.config.input_dim != first.config.input_dim {
            return Err(Error::Config("ensemble models disagree on input_dim".into()));
        }
    }
    check_dims(cohort, first.config.input_dim)?;

    let msi_l: Vec<bool> = cohort.iter().map(|s| s.labels.msi).collect();
    let hyper_l: Vec<bool> = cohort.iter().map(|s| s.labels.hypermut).collect();
    let mut per_model_probs = vec![Vec::with_capacity(cohort.len()); models.len()];
    let mut slides = Vec::with_capacity(cohort.len());
    for s in cohort {
        let x = crate::models::bag_features(&s.bag)?;
        let mut acc = [0.0; 3];
        for (m, store) in models.iter().zip(per_model_probs.iter_mut()) {
            let out = crate::models::forward(m, &x)?;
            let p = out.logits.map(sigmoid);
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
            store.push(p);
        }
        let p = acc.map(|a| a / models.len() as f64);
        slides.push(ExternalSlide {
            slide_id: s.bag.slide_id.clone(),
            msi: s.labels.msi,
            hypermut: s.labels.hypermut,
            msi_prob: p[0],
            mss_prob: p[1],
            hyper_prob: p[2],
        });
    }
    let spec_pair = |msi: &[f64], mss: &[f64]| -> Result<(f64, f64)> {
        let not_mss: Vec<f64> = mss.iter().map(|p| 1.0 - p).collect();
        Ok((
            or_nan(specificity_from_probs(msi, &msi_l, threshold))?,
            or_nan(specificity_from_probs(&not_mss, &msi_l, threshold))?,
        ))
    };
    let msi_p: Vec<f64> = slides.iter().map(|s| s.msi_prob).collect();
    let mss_p: Vec<f64> = slides.iter().map(|s| s.mss_prob).collect();
    let hyper_p: Vec<f64> = slides.iter().map(|s| s.hyper_prob).collect();
    let (spec_msi, spec_mss) = spec_pair(&msi_p, &mss_p)?;
    let per_model = per_model_probs
        .iter()
        .map(|probs| {
            let a: Vec<f64> = probs.iter().map(|p| p[0]).collect();
            let b: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            spec_pair(&a, &b).map(|(x, y)| ModelExternalMetrics {
                mss_spec_msi_head: x,
                mss_spec_mss_head: y,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_msi = msi_l.iter().filter(|&&l| l).count();
    let (msi_auc, msi_auc_note) = match roc_auc(&msi_p, &msi_l) {
        Ok(a) if n_msi == 1 => {
            (Some(a), Some("unstable: single positive".to_string()))
        }
        Ok(a) => (Some(a), None),
        Err(Error::UndefinedMetric(_)) => (None, Some("undefined: single class".to_string())),
        Err(e) => return Err(e),
    };
    let hyper_auc = match roc_auc(&hyper_p, &hyper_l) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ExternalReport {
        n_slides: cohort.len(),
        n_msi,
        threshold,
        mss_spec_msi_head: spec_msi,
        mss_spec_mss_head: spec_mss,
        msi_auc,
        msi_auc_note,
        hyper_auc,
        per_model,
        slides,
    })
}
