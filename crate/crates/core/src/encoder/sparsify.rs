use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Path, SparsePath};

/// Edges removed from a path of `n` edges at ratio `gamma`: floor(γ·n),
/// capped so that at least one edge survives.
pub fn removal_count(n: usize, gamma: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("reduction ratio {} outside [0, 1)", gamma)));
    }
    // the epsilon keeps products like 0.29 * 100 from flooring to 28
    let k = (gamma * n as f64 + 1e-9).floor() as usize;
    Ok(k.min(n.saturating_sub(1)))
}

/// Removes floor(γ·N) uniformly chosen edges, keeping the rest in order.
pub fn sparsify<R: Rng + ?Sized>(path: &Path, gamma: f64, rng: &mut R) -> Result<SparsePath> {
    let n = path.len();
    let k = removal_count(n, gamma)?;
    let mut removed = vec![false; n];
    for i in index::sample(rng, n, k) {
        removed[i] = true;
    }
    let (mut edges, mut orders) = (Vec::with_capacity(n - k), Vec::with_capacity(n - k));
    for (i, &e) in path.edges().iter().enumerate() {
        if !removed[i] {
            edges.push(e);
            orders.push(i + 1);
        }
    }
    SparsePath::new(edges, orders, n)
}

/// Removes exactly the given 1-based positions.
pub fn sparsify_removing(path: &Path, removed_orders: &[usize]) -> Result<SparsePath> {
    let n = path.len();
    if let Some(&bad) = removed_orders.iter().find(|&&o| o == 0 || o > n) {
        return Err(Error::invalid(format!("order {} outside 1..={}", bad, n)));
    }
    let (edges, orders): (Vec<_>, Vec<_>) = path
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed_orders.contains(&(i + 1)))
        .map(|(i, &e)| (e, i + 1))
        .unzip();
    SparsePath::new(edges, orders, n)
}
