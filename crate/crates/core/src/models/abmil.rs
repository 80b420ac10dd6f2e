use super::{Bound, ForwardPass};
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Gated attention pooling over projected tiles.
///
/// Returns the projected tiles `h`, the `1 x n` attention row and the pooled
/// `1 x hidden` embedding.
pub(super) fn gated_pool(
    bound: &Bound<'_>,
    tape: &mut Tape,
    features: Var,
) -> Result<(Var, Var, Var)> {
    let h = bound.linear(tape, features, "input")?;
    let h = tape.relu(h);
    let v = bound.linear(tape, h, "attn.v")?;
    let v = tape.tanh(v);
    let u = bound.linear(tape, h, "attn.u")?;
    let u = tape.sigmoid(u);
    let gated = tape.mul(v, u)?;
    let w = bound.var("attn.w")?;
    let scores = tape.matmul(gated, w)?;
    let scores = tape.transpose(scores);
    let attn = tape.softmax_rows(scores);
    let pooled = tape.matmul(attn, h)?;
    Ok((h, attn, pooled))
}

pub(super) fn forward(bound: &Bound<'_>, tape: &mut Tape, features: Var) -> Result<ForwardPass> {
    let (_, attn, pooled) = gated_pool(bound, tape, features)?;
    let logits = bound.linear(tape, pooled, "heads")?;
    Ok(ForwardPass {
        logits,
        attention: tape.value(attn).data().to_vec(),
        instance_logits: None,
    })
}
