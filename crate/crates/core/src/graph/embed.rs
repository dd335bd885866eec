use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::{RoadNetwork, VertexId};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Number of propagation steps mixed into each vertex vector.
pub const EMBEDDING_HOPS: usize = 4;

/// Spatially smooth edge vectors without training: random vertex vectors are
/// repeatedly averaged over the undirected neighbourhood (a random-projection
/// scheme in the style of FastRP), each hop row-normalised and summed. An edge
/// takes the first half of its source vector and the second half of its
/// destination vector; columns are then standardised. Rows of edge ids
/// missing from the network stay zero.
pub fn spatial_edge_embeddings(network: &RoadNetwork, d: usize, seed: u64) -> Result<Tensor<f64>> {
    if d < 2 {
        return Err(Error::invalid("embedding width must be at least 2"));
    }
    let index: BTreeMap<VertexId, usize> = network.vertices().enumerate().map(|(i, v)| (v, i)).collect();
    let n = index.len();
    let mut neighbours = vec![Vec::new(); n];
    for (_, e) in network.edges() {
        let (a, b) = (index[&e.src], index[&e.dst]);
        neighbours[a].push(b);
        neighbours[b].push(a);
    }

    let mut rng = rng::fork(seed, "spatial-embedding");
    let mut hop: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalise_rows(&mut hop, d);
    let mut acc = hop.clone();
    for _ in 0..EMBEDDING_HOPS {
        let mut next = vec![0.0; n * d];
        for (v, nb) in neighbours.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let row = &mut next[v * d..(v + 1) * d];
            for &u in nb {
                for (x, y) in row.iter_mut().zip(&hop[u * d..(u + 1) * d]) {
                    *x += y;
                }
            }
        }
        normalise_rows(&mut next, d);
        for (a, x) in acc.iter_mut().zip(&next) {
            *a += x;
        }
        hop = next;
    }

    let vocab = network.vocab_size();
    let half = d / 2;
    let mut table = vec![0.0; vocab * d];
    for (id, e) in network.edges() {
        let row = &mut table[id as usize * d..(id as usize + 1) * d];
        let (s, t) = (index[&e.src], index[&e.dst]);
        row[..half].copy_from_slice(&acc[s * d..s * d + half]);
        row[half..].copy_from_slice(&acc[t * d + half..(t + 1) * d]);
    }
    let ids: Vec<usize> = network.edges().map(|(id, _)| id as usize).collect();
    for c in 0..d {
        let mean = ids.iter().map(|&i| table[i * d + c]).sum::<f64>() / ids.len() as f64;
        let var = ids.iter().map(|&i| (table[i * d + c] - mean).powi(2)).sum::<f64>() / ids.len() as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for &i in &ids {
            table[i * d + c] = (table[i * d + c] - mean) / sd;
        }
    }
    Tensor::new([vocab, d], table)
}

fn normalise_rows(x: &mut [f64], d: usize) {
    for row in x.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}
