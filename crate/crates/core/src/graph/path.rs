use std::collections::HashSet;

use super::{EdgeId, RoadNetwork};
use crate::error::{Error, Result};

/// Ordered sequence of at least two edges. Edge `i` has order `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    edges: Vec<EdgeId>,
}

impl Path {
    pub fn new(edges: Vec<EdgeId>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::PathViolation {
                index: 0,
                reason: format!("a path needs at least 2 edges, got {}", edges.len()),
            });
        }
        Ok(Path { edges })
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Order-preserving subsequence of a parent path.
///
/// `orders` holds the 1-based positions of the kept edges in the parent,
/// strictly increasing; position 0 is reserved for the path token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsePath {
    edges: Vec<EdgeId>,
    orders: Vec<usize>,
    full_len: usize,
}

impl SparsePath {
    pub fn new(edges: Vec<EdgeId>, orders: Vec<usize>, full_len: usize) -> Result<Self> {
        if edges.len() != orders.len() {
            return Err(Error::invalid("sparse path needs one order per edge"));
        }
        if edges.is_empty() {
            return Err(Error::invalid("sparse path keeps no edges"));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("orders must be strictly increasing"));
        }
        if orders[0] == 0 || *orders.last().unwrap() > full_len {
            return Err(Error::invalid(format!(
                "orders must lie in 1..={}, got {:?}",
                full_len, orders
            )));
        }
        Ok(SparsePath {
            edges,
            orders,
            full_len,
        })
    }

    /// The whole path, nothing removed.
    pub fn full(path: &Path) -> Self {
        SparsePath {
            edges: path.edges().to_vec(),
            orders: (1..=path.len()).collect(),
            full_len: path.len(),
        }
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    /// Order indices Ω into the parent path (1-based).
    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    /// Length N of the parent path.
    pub fn full_len(&self) -> usize {
        self.full_len
    }

    /// Kept length N′.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// 1-based parent positions that were removed, ascending.
    pub fn removed_orders(&self) -> Vec<usize> {
        let mut kept = self.orders.iter().peekable();
        (1..=self.full_len)
            .filter(|o| {
                if kept.peek() == Some(&o) {
                    kept.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }
}

/// Checks that every edge exists and consecutive edges touch.
pub fn validate_path(network: &RoadNetwork, path: &Path) -> Result<()> {
    validate_edges(network, path.edges())
}

pub(crate) fn validate_edges(network: &RoadNetwork, edges: &[EdgeId]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::PathViolation {
            index: 0,
            reason: "fewer than 2 edges".into(),
        });
    }
    for (i, &e) in edges.iter().enumerate() {
        if network.edge(e).is_none() {
            return Err(Error::PathViolation {
                index: i,
                reason: format!("unknown edge {}", e),
            });
        }
        if i > 0 && !network.share_vertex(edges[i - 1], e) {
            return Err(Error::PathViolation {
                index: i,
                reason: format!("edges {} and {} share no vertex", edges[i - 1], e),
            });
        }
    }
    Ok(())
}

/// Jaccard index of the two edge sets.
pub fn jaccard(a: &[EdgeId], b: &[EdgeId]) -> f64 {
    let sa: HashSet<_> = a.iter().collect();
    let sb: HashSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
