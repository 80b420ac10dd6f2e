use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Weight decay is decoupled:
/// `p <- p - lr * wd * p` before the moment update is applied. Non-finite
/// gradients abort the step without touching parameters or state.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::InvalidInput(format!(
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric("non-finite gradient; step aborted".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            pd[i] -= lr * weight_decay * pd[i];
            let mi = &mut m.data_mut()[i];
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            let m_hat = *mi / bc1;
            let vi = &mut v.data_mut()[i];
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let v_hat = *vi / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }
    norm
}
