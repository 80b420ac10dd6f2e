use super::{BagOutput, PseudoLabels};
use crate::bag::Labels;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};
use crate::tensor::bce_with_logits;

/// The three slide-level tasks, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Msi,
    Mss,
    Hypermut,
}

pub const TASKS: [Task; 3] = [Task::Msi, Task::Mss, Task::Hypermut];

/// Positive-class weight per task, `N_total / N_pos` on the given labels.
/// A task with no positives gets weight 1.
pub fn class_weights(labels: &[Labels]) -> [f64; 3] {
    let n = labels.len() as f64;
    let mut pos = [0usize; 3];
    for l in labels {
        for (p, t) in pos.iter_mut().zip(l.targets()) {
            *p += (t == 1.0) as usize;
        }
    }
    pos.map(|p| if p == 0 { 1.0 } else { n / p as f64 })
}

fn per_task_weights(labels: &Labels, weights: &[f64; 3]) -> [f64; 3] {
    let t = labels.targets();
    [0, 1, 2].map(|i| if t[i] == 1.0 { weights[i] } else { 1.0 })
}

fn check_weights(weights: &[f64; 3]) -> Result<()> {
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "class weights must be positive and finite: {weights:?}"
        )));
    }
    Ok(())
}

/// Mean over the three tasks of class-weighted BCE-with-logits, plus
/// `instance_coeff * instance_loss` when an instance loss is given.
pub fn multitask_loss(
    output: &BagOutput,
    labels: &Labels,
    weights: &[f64; 3],
    instance_loss: Option<f64>,
    instance_coeff: f64,
) -> Result<f64> {
    check_weights(weights)?;
    if output.logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {:?}", output.logits)));
    }
    let t = labels.targets();
    let w = per_task_weights(labels, weights);
    let bag: f64 = (0..3).map(|i| w[i] * bce_with_logits(output.logits[i], t[i])).sum::<f64>() / 3.0;
    Ok(bag + instance_loss.map_or(0.0, |l| instance_coeff * l))
}

/// Tape version of [`multitask_loss`]. `instance` carries CLAM instance
/// logits and the pseudo-labels selected for this bag.
pub fn multitask_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    labels: &Labels,
    weights: &[f64; 3],
    instance: Option<(Var, &PseudoLabels)>,
    instance_coeff: f64,
) -> Result<Var> {
    check_weights(weights)?;
    let t = labels.targets();
    let w = per_task_weights(labels, weights);
    let bag = tape.weighted_bce(logits, &t, &w, 3.0)?;
    match instance {
        Some((inst, pseudo)) if !pseudo.is_empty() => {
            let n = tape.value(inst).len();
            let (targets, mask) = pseudo.targets(n, labels.msi);
            let il = tape.weighted_bce(inst, &targets, &mask, pseudo.len() as f64)?;
            let il = tape.scale(il, instance_coeff);
            tape.add(bag, il)
        }
        _ => Ok(bag),
    }
}
