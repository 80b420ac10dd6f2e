use crate::error::{Error, Result};
use crate::tensor::sigmoid;

/// Area under the ROC curve as the normalized Mann-Whitney U statistic;
/// tied positive/negative pairs count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled mid-ranks keep every quantity an integer.
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1; doubled mid-rank = i + j + 2
        let mid2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if labels[k] {
                pos_rank2 += mid2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u64;
    let u2 = pos_rank2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * n_neg as u64) as f64)
}

/// Fraction of negative-label slides with `sigmoid(score) < threshold`.
pub fn specificity(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    specificity_from_probs(&probs, labels, threshold)
}

/// Fraction of negative-label slides with `prob < threshold`.
pub fn specificity_from_probs(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (mut neg, mut correct) = (0usize, 0usize);
    for (&p, &l) in probs.iter().zip(labels) {
        if !l {
            neg += 1;
            if p < threshold {
                correct += 1;
            }
        }
    }
    if neg == 0 {
        return Err(Error::UndefinedMetric("specificity needs at least one negative".into()));
    }
    Ok(correct as f64 / neg as f64)
}

/// Mean and population standard deviation (denominator `n`) over the
/// non-NaN values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let values: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
