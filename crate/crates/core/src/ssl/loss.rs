use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HeadVars;
use crate::error::{Error, Result};
use crate::numerics::{ExprGraph, Scalar, Var};

/// Which auxiliary representation counts as the positive partner of
/// `PR_iʲ` in the cross-network loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositivePairing {
    /// `P̂R_iʲ`, the same view through the auxiliary encoder.
    #[default]
    SameView,
    /// `P̂R_i^{3−j}`, the other view through the auxiliary encoder.
    CrossView,
}

/// A batch of scored pairs and its BCE loss.
#[derive(Clone, Debug)]
pub struct RelationLoss {
    pub loss: Var,
    /// `[terms × 1]` relation scores.
    pub probs: Var,
    pub targets: Vec<f64>,
}

impl RelationLoss {
    pub fn terms(&self) -> usize {
        self.targets.len()
    }
}

/// For each of `k` anchors, an index drawn uniformly from the others.
pub fn draw_negatives<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<usize> {
    (0..k)
        .map(|i| {
            let j = rng.random_range(0..k - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

fn batch_size<T: Scalar>(g: &ExprGraph<T>, vars: &[Var]) -> Result<usize> {
    let k = g.shape(vars[0])[0];
    if vars.iter().any(|&v| g.shape(v) != g.shape(vars[0])) {
        return Err(Error::shape("relation_loss", "representation batches differ in shape"));
    }
    if k < 2 {
        return Err(Error::invalid(format!("a batch of {} has no negatives", k)));
    }
    Ok(k)
}

/// Scores `left[i]` against `right[i]` and takes the BCE sum divided by
/// `divisor`.
fn scored<T: Scalar>(
    g: &mut ExprGraph<T>,
    head: &HeadVars,
    left: &[Var],
    right: &[Var],
    targets: Vec<f64>,
    divisor: usize,
) -> Result<RelationLoss> {
    let l = g.concat(left, 0)?;
    let r = g.concat(right, 0)?;
    let probs = head.score(g, l, r)?;
    let t: Vec<T> = targets.iter().map(|&x| T::lit(x)).collect();
    let mean = g.bce(probs, &t)?;
    let loss = g.scale(mean, T::lit(targets.len() as f64 / divisor as f64))?;
    Ok(RelationLoss { loss, probs, targets })
}

/// Cross-network loss over `[K × d]` representations of both views from the
/// main (`main[j]`) and auxiliary (`aux[j]`) encoders: one positive and one
/// negative pair per path and view, BCE summed and divided by 2K.
pub fn cross_network_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut ExprGraph<T>,
    head: &HeadVars,
    main: [Var; 2],
    aux: [Var; 2],
    pairing: PositivePairing,
    rng: &mut R,
) -> Result<RelationLoss> {
    let k = batch_size(g, &[main[0], main[1], aux[0], aux[1]])?;
    let partner = |j: usize| match pairing {
        PositivePairing::SameView => aux[j],
        PositivePairing::CrossView => aux[1 - j],
    };
    let neg0 = draw_negatives(k, rng);
    let neg1 = draw_negatives(k, rng);
    let n0 = g.gather(partner(0), &neg0)?;
    let n1 = g.gather(partner(1), &neg1)?;
    let mut targets = vec![1.0; 2 * k];
    targets.extend(vec![0.0; 2 * k]);
    scored(
        g,
        head,
        &[main[0], main[1], main[0], main[1]],
        &[partner(0), partner(1), n0, n1],
        targets,
        2 * k,
    )
}

/// Cross-view loss within the main encoder: `⟨PR_i¹, PR_i²⟩` positive and
/// `⟨PR_i¹, PR_{\i}²⟩` negative, BCE summed and divided by K.
pub fn cross_view_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut ExprGraph<T>,
    head: &HeadVars,
    view1: Var,
    view2: Var,
    rng: &mut R,
) -> Result<RelationLoss> {
    let k = batch_size(g, &[view1, view2])?;
    let neg = draw_negatives(k, rng);
    let n = g.gather(view2, &neg)?;
    let mut targets = vec![1.0; k];
    targets.extend(vec![0.0; k]);
    scored(g, head, &[view1, view1], &[view2, n], targets, k)
}
