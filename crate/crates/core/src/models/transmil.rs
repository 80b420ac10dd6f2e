use super::{Bound, ForwardPass};
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Post-norm residual: `layernorm(x + y) * g + b`.
fn add_norm(bound: &Bound<'_>, tape: &mut Tape, x: Var, y: Var, prefix: &str) -> Result<Var> {
    let s = tape.add(x, y)?;
    let n = tape.layernorm_rows(s);
    let g = bound.var(&format!("{prefix}.g"))?;
    let b = bound.var(&format!("{prefix}.b"))?;
    let n = tape.mul(n, g)?;
    tape.add(n, b)
}

/// Multi-head self-attention; returns the output and the per-head
/// attention matrices.
fn self_attention(
    bound: &Bound<'_>,
    tape: &mut Tape,
    x: Var,
    layer: usize,
    n_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let q = bound.linear(tape, x, &format!("layer{layer}.q"))?;
    let kw = bound.var(&format!("layer{layer}.k.w"))?;
    let k = tape.matmul(x, kw)?;
    let v = bound.linear(tape, x, &format!("layer{layer}.v"))?;
    let hidden = tape.value(q).cols();
    let dh = hidden / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut maps = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let (a, b) = (hd * dh, (hd + 1) * dh);
        let qh = tape.slice_cols(q, a, b)?;
        let kh = tape.slice_cols(k, a, b)?;
        let vh = tape.slice_cols(v, a, b)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        heads.push(tape.matmul(attn, vh)?);
        maps.push(attn);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    let out = bound.linear(tape, merged, &format!("layer{layer}.o"))?;
    Ok((out, maps))
}

pub(super) fn forward(bound: &Bound<'_>, tape: &mut Tape, features: Var) -> Result<ForwardPass> {
    let cfg = bound.params.config;
    let h = bound.linear(tape, features, "input")?;
    let cls = bound.var("cls")?;
    let mut x = tape.concat_rows(&[cls, h])?;
    let mut last_maps = Vec::new();
    for layer in 0..cfg.n_attn_layers {
        let (attn_out, maps) = self_attention(bound, tape, x, layer, cfg.n_heads)?;
        x = add_norm(bound, tape, x, attn_out, &format!("layer{layer}.ln1"))?;
        let f = bound.linear(tape, x, &format!("layer{layer}.ff1"))?;
        let f = tape.relu(f);
        let f = bound.linear(tape, f, &format!("layer{layer}.ff2"))?;
        x = add_norm(bound, tape, x, f, &format!("layer{layer}.ln2"))?;
        last_maps = maps;
    }
    let cls_out = tape.slice_rows(x, 0, 1)?;
    let logits = bound.linear(tape, cls_out, "heads")?;

    // CLS-row attention onto tiles, averaged over heads, renormalized.
    let n = tape.value(features).rows();
    let mut attention = vec![0.0; n];
    for &m in &last_maps {
        let row = tape.value(m).row(0);
        for (a, v) in attention.iter_mut().zip(&row[1..]) {
            *a += v / last_maps.len() as f64;
        }
    }
    let total: f64 = attention.iter().sum();
    attention.iter_mut().for_each(|a| *a /= total);

    Ok(ForwardPass {
        logits,
        attention,
        instance_logits: None,
    })
}
