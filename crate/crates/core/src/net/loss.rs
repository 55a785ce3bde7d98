use crate::descriptor::{squared_l2, GlobalDescriptor};
use crate::error::{Error, Result};

/// Positives sampled per training tuple.
pub const P_POS: usize = 2;
/// Negatives sampled per training tuple.
pub const P_NEG: usize = 18;

/// Hinge margins of the lazy quadruplet loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupletMargins {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for QuadrupletMargins {
    fn default() -> Self {
        QuadrupletMargins {
            alpha: 0.5,
            beta: 0.2,
        }
    }
}

/// Lazy quadruplet loss over squared L2 distances `δ`:
///
/// `max_j [α + min_p δ(a, pos_p) − δ(a, neg_j)]₊ + max_j [β + min_p δ(a, pos_p) − δ(neg*, neg_j)]₊`
///
/// where `neg*` is a negative of the anchor that is also dissimilar to every
/// other negative.
pub fn lazy_quadruplet_loss(
    anchor: &GlobalDescriptor,
    positives: &[GlobalDescriptor],
    negatives: &[GlobalDescriptor],
    neg_star: &GlobalDescriptor,
    margins: QuadrupletMargins,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyInput("quadruplet needs at least one positive"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyInput("quadruplet needs at least one negative"));
    }
    let dim = anchor.dim();
    for d in positives.iter().chain(negatives).chain(std::iter::once(neg_star)) {
        if d.dim() != dim {
            return Err(Error::Dimension(dim, d.dim()));
        }
    }
    let a = anchor.as_slice();
    let best_pos = positives
        .iter()
        .map(|p| squared_l2(a, p.as_slice()))
        .fold(f64::INFINITY, f64::min);
    let anchor_term = negatives
        .iter()
        .map(|n| (margins.alpha + best_pos - squared_l2(a, n.as_slice())).max(0.0))
        .fold(0.0, f64::max);
    let star = neg_star.as_slice();
    let star_term = negatives
        .iter()
        .map(|n| (margins.beta + best_pos - squared_l2(star, n.as_slice())).max(0.0))
        .fold(0.0, f64::max);
    Ok(anchor_term + star_term)
}
