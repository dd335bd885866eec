use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mare: f64,
    /// Percent; absent when not requested.
    pub mape: Option<f64>,
    pub tau: f64,
    pub rho: f64,
}

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape("metrics", format!("{} targets vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(Error::invalid("metrics need at least 2 samples"));
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite target or prediction"));
    }
    Ok(())
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    Ok(y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y_true.len() as f64)
}

/// `Σ|Δ| / Σ|y|`.
pub fn mare(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    let denom: f64 = y_true.iter().map(|y| y.abs()).sum();
    if denom == 0.0 {
        return Err(Error::invalid("MARE undefined: all true values are zero"));
    }
    Ok(y_true.iter().zip(y_pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

/// Mean absolute percentage error, in percent.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    if let Some(i) = y_true.iter().position(|&y| y == 0.0) {
        return Err(Error::ZeroTarget(i));
    }
    let s: f64 = y_true.iter().zip(y_pred).map(|(a, b)| ((a - b) / a).abs()).sum();
    Ok(100.0 * s / y_true.len() as f64)
}

/// Σ t(t−1)/2 over runs of equal keys in an already sorted sequence.
fn tied_pairs<K: PartialEq>(sorted: impl Iterator<Item = K>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<K> = None;
    for k in sorted {
        if prev.as_ref() == Some(&k) {
            run += 1;
        } else {
            total += run * (run.saturating_sub(1)) / 2;
            run = 1;
        }
        prev = Some(k);
    }
    total + run * (run.saturating_sub(1)) / 2
}

/// Stable merge sort of `v` counting the exchanges needed.
fn sort_counting_swaps(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    let mut buf = vec![0.0; n];
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            let k = k + mid - i;
            buf[k..k + end - j].copy_from_slice(&v[j..end]);
            start = end;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    swaps
}

/// Kendall's τ-b in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(idx.iter().map(|&i| x[i]));
    let n3 = tied_pairs(idx.iter().map(|&i| (x[i], y[i])));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = sort_counting_swaps(&mut ys);
    let n2 = tied_pairs(ys.iter().copied());
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::invalid("rank correlation undefined for constant input"));
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok(num / denom)
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let m = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("rank correlation undefined for constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn metric_report(y_true: &[f64], y_pred: &[f64], with_mape: bool) -> Result<MetricReport> {
    Ok(MetricReport {
        mae: mae(y_true, y_pred)?,
        mare: mare(y_true, y_pred)?,
        mape: if with_mape { Some(mape(y_true, y_pred)?) } else { None },
        tau: kendall_tau(y_true, y_pred)?,
        rho: spearman_rho(y_true, y_pred)?,
    })
}
