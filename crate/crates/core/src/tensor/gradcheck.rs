use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {v}")));
    }
    Ok((tape, loss))
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences over every parameter coordinate; returns the largest
/// [`relative_error`].
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let (tape, loss) = eval(&loss_fn, params)?;
    let grads = tape.backward(loss)?.for_params(params);
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (p, g) in grads.iter().enumerate() {
        for j in 0..params[p].len() {
            let orig = params[p].data()[j];
            work[p].data_mut()[j] = orig + eps;
            let (t, l) = eval(&loss_fn, &work)?;
            let up = t.value(l).item();
            work[p].data_mut()[j] = orig - eps;
            let (t, l) = eval(&loss_fn, &work)?;
            let down = t.value(l).item();
            work[p].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(g.data()[j], fd));
        }
    }
    Ok(worst)
}
