use serde::{Deserialize, Serialize};

use crate::encoder::EncodedBatch;
use crate::error::{Error, Result};
use crate::numerics::{ExprGraph, Scalar, Tensor, Var};

/// How representations are softened before comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Softening {
    /// Elementwise `exp(x / t)`.
    #[default]
    Exp,
    /// Row-wise `softmax(x / t)`.
    Softmax,
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("temperature {} must be positive", t)));
    }
    Ok(())
}

pub fn soften<T: Scalar>(g: &mut ExprGraph<T>, x: Var, t: f64, mode: Softening) -> Result<Var> {
    check_temperature(t)?;
    let x = g.scale(x, T::lit(1.0 / t))?;
    match mode {
        Softening::Exp => g.exp(x),
        Softening::Softmax => g.softmax(x, 1),
    }
}

/// `Σ_r w_r ‖sp(a_r) − sp(b_r)‖²` over the rows of two `[R × d]` matrices.
fn weighted_row_distance<T: Scalar>(
    g: &mut ExprGraph<T>,
    a: Var,
    b: Var,
    weights: Vec<f64>,
    t: f64,
    mode: Softening,
) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("kd_loss", format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let d = g.shape(a)[1];
    let sa = soften(g, a, t, mode)?;
    let sb = soften(g, b, t, mode)?;
    let diff = g.sub(sa, sb)?;
    let sq = g.mul(diff, diff)?;
    let ones = g.constant(Tensor::full([d, 1], T::one()));
    let per_row = g.matmul(sq, ones)?;
    let n = weights.len();
    let w = g.constant(Tensor::new([n, 1], weights.into_iter().map(T::lit).collect())?);
    let weighted = g.mul(per_row, w)?;
    g.sum(weighted)
}

/// Global loss `‖sp(PR_T) − sp(PR_S)‖²`, averaged over the paths of the batch.
pub fn global_kd_loss<T: Scalar>(
    g: &mut ExprGraph<T>,
    teacher: &EncodedBatch,
    student: &EncodedBatch,
    t: f64,
    mode: Softening,
) -> Result<Var> {
    check_segments(teacher, student)?;
    let k = teacher.segments.len();
    let a = teacher.prs(g)?;
    let b = student.prs(g)?;
    weighted_row_distance(g, a, b, vec![1.0 / k as f64; k], t, mode)
}

/// Local loss: per path the mean over kept edges of
/// `‖sp(F_T(e)) − sp(F_S(e))‖²`, averaged over the batch.
pub fn local_kd_loss<T: Scalar>(
    g: &mut ExprGraph<T>,
    teacher: &EncodedBatch,
    student: &EncodedBatch,
    t: f64,
    mode: Softening,
) -> Result<Var> {
    check_segments(teacher, student)?;
    let k = teacher.segments.len() as f64;
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for &(start, len) in &teacher.segments {
        let n = len - 1;
        if n == 0 {
            return Err(Error::invalid("local distillation needs at least one kept edge"));
        }
        rows.extend(start + 1..start + len);
        weights.extend(std::iter::repeat(1.0 / (n as f64 * k)).take(n));
    }
    let a = g.gather(teacher.states, &rows)?;
    let b = g.gather(student.states, &rows)?;
    weighted_row_distance(g, a, b, weights, t, mode)
}

fn check_segments(a: &EncodedBatch, b: &EncodedBatch) -> Result<()> {
    if a.segments != b.segments {
        return Err(Error::invalid("teacher and student encoded different inputs"));
    }
    Ok(())
}

pub struct GlkdLoss {
    pub global: Var,
    pub local: Var,
    pub glkd: Var,
}

/// `α·L_global + (1−α)·L_local`.
pub fn glkd_loss<T: Scalar>(
    g: &mut ExprGraph<T>,
    teacher: &EncodedBatch,
    student: &EncodedBatch,
    alpha: f64,
    t: f64,
    mode: Softening,
) -> Result<GlkdLoss> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {} outside [0, 1]", alpha)));
    }
    let global = global_kd_loss(g, teacher, student, t, mode)?;
    let local = local_kd_loss(g, teacher, student, t, mode)?;
    let a = g.scale(global, T::lit(alpha))?;
    let b = g.scale(local, T::lit(1.0 - alpha))?;
    let glkd = g.add(a, b)?;
    Ok(GlkdLoss { global, local, glkd })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A hand-built encoding: rows stacked, one segment per path.
    fn batch(g: &mut ExprGraph<f64>, rows: &[&[f64]], segments: Vec<(usize, usize)>) -> EncodedBatch {
        EncodedBatch {
            states: g.constant(Tensor::from_rows(rows).unwrap()),
            segments,
            attention: Vec::new(),
        }
    }

    #[test]
    fn global_closed_form() {
        let t = 9.0;
        let mut g = ExprGraph::new();
        let a = batch(&mut g, &[&[0.0], &[5.0]], vec![(0, 2)]);
        let b = batch(&mut g, &[&[t * 2f64.ln()], &[-1.0]], vec![(0, 2)]);
        let l = global_kd_loss(&mut g, &a, &b, t, Softening::Exp).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-12);
        let same = global_kd_loss(&mut g, &a, &a, t, Softening::Exp).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
    }

    #[test]
    fn global_softens_with_temperature() {
        let mut g = ExprGraph::new();
        let a = batch(&mut g, &[&[1.0, 2.0], &[0.0, 0.0]], vec![(0, 2)]);
        let b = batch(&mut g, &[&[0.5, 3.0], &[0.0, 0.0]], vec![(0, 2)]);
        let mut last = f64::INFINITY;
        for t in [0.5, 1.0, 2.0, 4.0, 9.0, 20.0] {
            let l = global_kd_loss(&mut g, &a, &b, t, Softening::Exp).unwrap();
            let v = g.value(l).item();
            assert!(v < last);
            last = v;
        }
        assert!(global_kd_loss(&mut g, &a, &b, 0.0, Softening::Exp).is_err());
    }

    #[test]
    fn local_is_a_mean_over_edges() {
        let t = 2.0;
        let mut g = ExprGraph::new();
        // one edge: equals the global formula on that state
        let a = batch(&mut g, &[&[0.0, 0.0], &[0.3, -0.2]], vec![(0, 2)]);
        let b = batch(&mut g, &[&[0.0, 0.0], &[1.0, 0.4]], vec![(0, 2)]);
        let l1 = local_kd_loss(&mut g, &a, &b, t, Softening::Exp).unwrap();
        let expect: f64 = [(0.3f64, 1.0f64), (-0.2, 0.4)]
            .iter()
            .map(|(x, y)| ((x / t).exp() - (y / t).exp()).powi(2))
            .sum();
        assert!((g.value(l1).item() - expect).abs() < 1e-12);
        // duplicating the discrepancy leaves the mean unchanged
        let a2 = batch(&mut g, &[&[0.0, 0.0], &[0.3, -0.2], &[0.3, -0.2]], vec![(0, 3)]);
        let b2 = batch(&mut g, &[&[0.0, 0.0], &[1.0, 0.4], &[1.0, 0.4]], vec![(0, 3)]);
        let l2 = local_kd_loss(&mut g, &a2, &b2, t, Softening::Exp).unwrap();
        assert!((g.value(l2).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn glkd_combines_components() {
        let mut g = ExprGraph::new();
        let a = batch(&mut g, &[&[0.1, 0.9], &[0.3, -0.2], &[1.0, 1.0], &[0.0, 2.0]], vec![(0, 2), (2, 2)]);
        let b = batch(&mut g, &[&[0.4, 0.2], &[1.0, 0.4], &[0.0, 1.5], &[0.5, 0.5]], vec![(0, 2), (2, 2)]);
        for mode in [Softening::Exp, Softening::Softmax] {
            for alpha in [0.0, 0.5, 1.0] {
                let l = glkd_loss(&mut g, &a, &b, alpha, 3.0, mode).unwrap();
                let (gl, lo) = (g.value(l.global).item(), g.value(l.local).item());
                assert!((g.value(l.glkd).item() - (alpha * gl + (1.0 - alpha) * lo)).abs() < 1e-12);
                assert!(gl > 0.0 && lo > 0.0);
            }
        }
        assert!(glkd_loss(&mut g, &a, &b, 1.5, 3.0, Softening::Exp).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut g = ExprGraph::new();
        let a = batch(&mut g, &[&[0.0], &[1.0], &[2.0]], vec![(0, 3)]);
        let b = batch(&mut g, &[&[0.0], &[1.0], &[2.0]], vec![(0, 2), (2, 1)]);
        assert!(global_kd_loss(&mut g, &a, &b, 1.0, Softening::Exp).is_err());
    }
}
