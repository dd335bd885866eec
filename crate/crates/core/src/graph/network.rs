use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub type EdgeId = u32;
pub type VertexId = u32;

/// Directed road segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub length_m: f64,
    pub base_time_s: f64,
}

/// Directed road graph with per-edge length and free-flow travel time.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    vertices: BTreeSet<VertexId>,
    edges: BTreeMap<EdgeId, Edge>,
    out_edges: BTreeMap<VertexId, Vec<EdgeId>>,
}

impl RoadNetwork {
    /// Builds a network over an explicit vertex set.
    pub fn new(
        vertices: impl IntoIterator<Item = VertexId>,
        edges: impl IntoIterator<Item = (EdgeId, Edge)>,
    ) -> Result<Self> {
        let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
        let mut map = BTreeMap::new();
        for (id, e) in edges {
            if !vertices.contains(&e.src) || !vertices.contains(&e.dst) {
                return Err(Error::invalid(format!("edge {} references an unknown vertex", id)));
            }
            if !(e.length_m > 0.0 && e.length_m.is_finite()) {
                return Err(Error::invalid(format!("edge {} has non-positive length", id)));
            }
            if !(e.base_time_s > 0.0 && e.base_time_s.is_finite()) {
                return Err(Error::invalid(format!("edge {} has non-positive base time", id)));
            }
            if map.insert(id, e).is_some() {
                return Err(Error::invalid(format!("duplicate edge id {}", id)));
            }
        }
        let mut out_edges: BTreeMap<VertexId, Vec<EdgeId>> = BTreeMap::new();
        for (&id, e) in &map {
            out_edges.entry(e.src).or_default().push(id);
        }
        Ok(RoadNetwork {
            vertices,
            edges: map,
            out_edges,
        })
    }

    /// Builds a network whose vertex set is the edges' endpoints.
    pub fn from_edges(edges: impl IntoIterator<Item = (EdgeId, Edge)>) -> Result<Self> {
        let edges: Vec<_> = edges.into_iter().collect();
        let vertices = edges.iter().flat_map(|(_, e)| [e.src, e.dst]);
        let vertices: Vec<_> = vertices.collect();
        Self::new(vertices, edges)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().map(|(&k, v)| (k, v))
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices.iter().copied()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Rows needed in an embedding table indexed directly by edge id.
    pub fn vocab_size(&self) -> usize {
        self.edges.keys().next_back().map_or(0, |&m| m as usize + 1)
    }

    /// Outgoing edges of `v`, in id order.
    pub fn out_edges(&self, v: VertexId) -> &[EdgeId] {
        self.out_edges.get(&v).map_or(&[], Vec::as_slice)
    }

    /// Whether two edges touch a common vertex.
    pub fn share_vertex(&self, a: EdgeId, b: EdgeId) -> bool {
        match (self.edge(a), self.edge(b)) {
            (Some(x), Some(y)) => x.src == y.src || x.src == y.dst || x.dst == y.src || x.dst == y.dst,
            _ => false,
        }
    }
}

/// 4-connected `rows × cols` grid with both directions per road.
///
/// Each road gets a length in [50, 500] m; each direction its own speed in
/// [8, 16] m/s, so base times differ by direction.
pub fn generate_grid_network(rows: usize, cols: usize, seed: u64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!("grid must be at least 2x2, got {}x{}", rows, cols)));
    }
    let mut rng = rng::fork(seed, "grid");
    let vid = |r: usize, c: usize| (r * cols + c) as VertexId;
    let mut edges = Vec::new();
    let mut next: EdgeId = 0;
    for r in 0..rows {
        for c in 0..cols {
            let mut neighbours = Vec::with_capacity(2);
            if c + 1 < cols {
                neighbours.push(vid(r, c + 1));
            }
            if r + 1 < rows {
                neighbours.push(vid(r + 1, c));
            }
            for n in neighbours {
                let length = rng.random_range(50.0..=500.0);
                for (src, dst) in [(vid(r, c), n), (n, vid(r, c))] {
                    let speed = rng.random_range(8.0..=16.0);
                    edges.push((
                        next,
                        Edge {
                            src,
                            dst,
                            length_m: length,
                            base_time_s: length / speed,
                        },
                    ));
                    next += 1;
                }
            }
        }
    }
    RoadNetwork::new(0..(rows * cols) as VertexId, edges)
}
