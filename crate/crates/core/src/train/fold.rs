use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{adam_step, clip_gradients, lr_at, stream_rng, subsample_indices, AdamState, Stream, TrainConfig};
use crate::bag::{LabeledSlide, Labels};
use crate::error::{Error, Result};
use crate::eval::{roc_auc, specificity};
use crate::models::{
    bag_features, bag_loss_on_tape, class_weights, BagOutput, ModelConfig, ModelParams,
};
use crate::tensor::{Tape, Tensor};

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub mean_train_loss: f64,
    pub val_msi_auc: f64,
    pub val_mss_spec: f64,
    pub val_hyper_auc: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    /// Parameters from the epoch with the highest validation MSI AUC.
    pub best: ModelParams,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub last: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub class_weights: [f64; 3],
}

impl FoldResult {
    pub fn best_record(&self) -> &EpochRecord {
        &self.trace[self.best_epoch - 1]
    }

    pub fn last_record(&self) -> &EpochRecord {
        self.trace.last().expect("trace is never empty")
    }
}

/// Model output for one slide.
#[derive(Debug, Clone)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub labels: Labels,
    pub output: BagOutput,
}

/// Scores every slide on all of its tiles.
pub fn predict_bags(params: &ModelParams, slides: &[LabeledSlide]) -> Result<Vec<SlidePrediction>> {
    slides
        .iter()
        .map(|s| {
            Ok(SlidePrediction {
                slide_id: s.bag.slide_id.clone(),
                labels: s.labels,
                output: crate::models::forward(params, &bag_features(&s.bag)?)?,
            })
        })
        .collect()
}

/// Metric or NaN when undefined on this split.
fn or_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// `(msi_auc, mss_spec, hyper_auc)`; MSS specificity is measured on the
/// MSI head (MSS slides with MSI probability below threshold).
pub fn split_metrics(preds: &[SlidePrediction], threshold: f64) -> Result<(f64, f64, f64)> {
    let msi: Vec<f64> = preds.iter().map(|p| p.output.logits[0]).collect();
    let hyper: Vec<f64> = preds.iter().map(|p| p.output.logits[2]).collect();
    let msi_l: Vec<bool> = preds.iter().map(|p| p.labels.msi).collect();
    let hyper_l: Vec<bool> = preds.iter().map(|p| p.labels.hypermut).collect();
    Ok((
        or_nan(roc_auc(&msi, &msi_l))?,
        or_nan(specificity(&msi, &msi_l, threshold))?,
        or_nan(roc_auc(&hyper, &hyper_l))?,
    ))
}

struct Prepared {
    features: Tensor,
    labels: Labels,
}

/// One optimizer step on one bag; returns the loss.
fn step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    features: Tensor,
    labels: &Labels,
    weights: &[f64; 3],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.leaf(features);
    let loss = bag_loss_on_tape(params, &mut tape, &vars, x, labels, weights, cfg.clam_instance_coeff)?;
    let loss_value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?.for_params(params.tensors());
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient (loss {loss_value}); step aborted"
        )));
    }
    clip_gradients(&mut grads, cfg.clip_norm);
    adam_step(params.tensors_mut(), &grads, adam, lr, cfg.weight_decay)?;
    Ok(loss_value)
}

/// Trains one cross-validation fold. One optimizer step per slide; slide
/// order and tile subsamples come from the `(seed, fold, epoch)` stream.
/// Class weights are computed on `train` only.
pub fn train_fold(
    train: &[LabeledSlide],
    val: &[LabeledSlide],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    fold: u64,
) -> Result<FoldResult> {
    cfg.validate()?;
    let labels: Vec<Labels> = train.iter().map(|s| s.labels).collect();
    let n_pos = labels.iter().filter(|l| l.msi).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Config(format!(
            "training split needs both MSI classes ({n_pos} positive of {})",
            labels.len()
        )));
    }
    let weights = class_weights(&labels);
    let prepared: Vec<Prepared> = train
        .iter()
        .map(|s| {
            Ok(Prepared {
                features: bag_features(&s.bag)?,
                labels: s.labels,
            })
        })
        .collect::<Result<_>>()?;

    let mut params = ModelParams::init(*model_cfg)?;
    let mut adam = AdamState::new(params.tensors());
    let spe = train.len();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, Stream::Epoch, fold, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let first_lr = lr_at(epoch * spe, spe, cfg)?;
        let mut loss_sum = 0.0;
        for (k, &i) in order.iter().enumerate() {
            let p = &prepared[i];
            let features = match cfg
                .max_tiles
                .and_then(|m| subsample_indices(p.features.rows(), m, &mut rng))
            {
                Some(idx) => {
                    let c = p.features.cols();
                    let mut data = Vec::with_capacity(idx.len() * c);
                    for &r in &idx {
                        data.extend_from_slice(p.features.row(r));
                    }
                    Tensor::matrix(idx.len(), c, data)?
                }
                None => p.features.clone(),
            };
            let lr = lr_at(epoch * spe + k, spe, cfg)?;
            loss_sum += step(&mut params, &mut adam, features, &p.labels, &weights, lr, cfg)?;
        }
        let preds = predict_bags(&params, val)?;
        let (auc, spec, hyper) = split_metrics(&preds, cfg.threshold)?;
        trace.push(EpochRecord {
            epoch: epoch + 1,
            lr: first_lr,
            mean_train_loss: loss_sum / spe as f64,
            val_msi_auc: auc,
            val_mss_spec: spec,
            val_hyper_auc: hyper,
        });
        let better = match &best {
            None => true,
            Some((_, b, _)) => auc > *b || (b.is_nan() && !auc.is_nan()),
        };
        if better {
            best = Some((epoch + 1, auc, params.clone()));
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(FoldResult {
        best: best_params,
        best_epoch,
        last: params,
        trace,
        class_weights: weights,
    })
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Per-epoch trace CSV.
pub fn write_trace_csv(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,lr,mean_train_loss,val_msi_auc,val_mss_spec,val_hyper_auc\n");
    for r in trace {
        out.push_str(&format!(
            "{},{:.6e},{:.6},{},{},{}\n",
            r.epoch,
            r.lr,
            r.mean_train_loss,
            fmt_metric(r.val_msi_auc),
            fmt_metric(r.val_mss_spec),
            fmt_metric(r.val_hyper_auc)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
