use super::abmil::gated_pool;
use super::{Bound, ForwardPass};
use crate::error::Result;
use crate::tensor::{Tape, Var};

pub(super) fn forward(bound: &Bound<'_>, tape: &mut Tape, features: Var) -> Result<ForwardPass> {
    let (h, attn, pooled) = gated_pool(bound, tape, features)?;
    let logits = bound.linear(tape, pooled, "heads")?;
    let inst = bound.linear(tape, h, "inst")?;
    Ok(ForwardPass {
        logits,
        attention: tape.value(attn).data().to_vec(),
        instance_logits: Some(inst),
    })
}

/// Pseudo-labelled tiles for the CLAM instance loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    /// Highest-attended tiles, best first.
    pub top: Vec<usize>,
    /// Lowest-attended tiles, lowest first.
    pub bottom: Vec<usize>,
}

impl PseudoLabels {
    /// Per-tile targets and weights over all `n` tiles; unlabelled tiles get
    /// weight 0. Positive slides label top tiles 1 and bottom tiles 0;
    /// negative slides the reverse.
    pub fn targets(&self, n: usize, positive_slide: bool) -> (Vec<f64>, Vec<f64>) {
        let (top_t, bottom_t) = if positive_slide { (1.0, 0.0) } else { (0.0, 1.0) };
        let mut targets = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for &i in &self.top {
            targets[i] = top_t;
            weights[i] = 1.0;
        }
        for &i in &self.bottom {
            targets[i] = bottom_t;
            weights[i] = 1.0;
        }
        (targets, weights)
    }

    pub fn len(&self) -> usize {
        self.top.len() + self.bottom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Top-k and bottom-k tiles of a single ascending sort by (attention, tile
/// index), so the two sets are disjoint. `None` when the bag has fewer than `2k` tiles.
pub fn select_pseudo_labels(attention: &[f64], k: usize) -> Option<PseudoLabels> {
    let n = attention.len();
    if k == 0 || n < 2 * k {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| attention[a].total_cmp(&attention[b]).then(a.cmp(&b)));
    let bottom = order[..k].to_vec();
    let top = order[n - k..].iter().rev().copied().collect();
    Some(PseudoLabels { top, bottom })
}
