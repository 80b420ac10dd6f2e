use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate at optimizer step `step` (0-based).
///
/// Linear warmup `lr * (step + 1) / warmup_steps` over the first
/// `warmup_epochs * steps_per_epoch` steps, then half-cosine decay
/// `lr * 0.5 * (1 + cos(pi * t))` with `t` running from 0 at the end of
/// warmup to 1 at `epochs * steps_per_epoch`.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if steps_per_epoch == 0 {
        return Err(Error::InvalidInput("steps_per_epoch must be positive".into()));
    }
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warmup {
        return Ok(cfg.lr_base * ((step + 1) as f64 / warmup as f64));
    }
    let span = total.saturating_sub(warmup);
    let t = if span == 0 {
        1.0
    } else {
        ((step - warmup) as f64 / span as f64).min(1.0)
    };
    Ok(cfg.lr_base * 0.5 * (1.0 + (PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr_base: 1e-4,
            epochs: 30,
            warmup_epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_endpoint_midpoint_and_end() {
        let c = cfg();
        let spe = 10;
        assert_eq!(lr_at(29, spe, &c).unwrap(), 1e-4);
        assert_eq!(lr_at(30, spe, &c).unwrap(), 1e-4);
        let mid = 30 + 270 / 2;
        assert!((lr_at(mid, spe, &c).unwrap() - 5e-5).abs() < 1e-15);
        assert!(lr_at(300, spe, &c).unwrap().abs() < 1e-15);
        assert!(lr_at(0, spe, &c).unwrap() > 0.0);
    }

    #[test]
    fn zero_steps_per_epoch_is_an_error() {
        assert!(lr_at(0, 0, &cfg()).is_err());
    }

    #[test]
    fn monotone_phases() {
        let c = cfg();
        let spe = 7;
        let lrs: Vec<f64> = (0..=210).map(|s| lr_at(s, spe, &c).unwrap()).collect();
        for w in lrs[..21].windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in lrs[21..].windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
