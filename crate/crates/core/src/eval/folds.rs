use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::train::{stream_rng, Stream};

/// Fold assignment plus any stratification warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KFold {
    /// Held-out indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl KFold {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices not in fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Stratified k-fold split. Each class is shuffled with the seed's fold
/// stream and dealt round-robin; negatives continue the rotation where the
/// positives stopped so fold sizes also stay within one of each other.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<KFold> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} samples cannot fill {k} folds")));
    }
    let mut rng = stream_rng(seed, Stream::Folds, k as u64, n as u64);
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut folds = vec![Vec::new(); k];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        folds[j % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());

    let mut warnings = Vec::new();
    if pos.is_empty() || neg.is_empty() {
        warnings.push(format!(
            "labels are single-class ({} positive of {n}); folds are unstratified",
            pos.len()
        ));
    } else if pos.len() < k {
        warnings.push(format!(
            "only {} positives for {k} folds; {} folds have no positive",
            pos.len(),
            k - pos.len()
        ));
    }
    Ok(KFold { folds, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coad_like_counts() {
        let labels: Vec<bool> = (0..137).map(|i| i < 23).collect();
        let kf = stratified_kfold(&labels, 5, 7).unwrap();
        let mut counts: Vec<usize> = kf
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i]).count())
            .collect();
        counts.sort();
        assert_eq!(counts, vec![4, 4, 5, 5, 5]);
        assert!(kf.warnings.is_empty());
    }

    #[test]
    fn single_class_warns() {
        let kf = stratified_kfold(&[false; 10], 5, 0).unwrap();
        assert_eq!(kf.warnings.len(), 1);
        assert_eq!(kf.folds.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn bad_k() {
        assert!(stratified_kfold(&[true, false], 1, 0).is_err());
        assert!(stratified_kfold(&[true, false], 3, 0).is_err());
    }
}
