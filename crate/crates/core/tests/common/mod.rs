#![allow(dead_code)]

pub mod gradcases;

use lightpath::encoder::{EncoderConfig, EncoderModel};
use lightpath::graph::{generate_grid_network, generate_synthetic_paths, spatial_edge_embeddings, Path, RoadNetwork};

pub fn network(side: usize) -> RoadNetwork {
    generate_grid_network(side, side, 1).unwrap()
}

/// `n` walks of `length` edges, five per start vertex.
pub fn walks(net: &RoadNetwork, n: usize, length: usize, seed: u64) -> Vec<Path> {
    let ds = generate_synthetic_paths(net, n.div_ceil(5), length, 5, seed).unwrap();
    ds.paths().take(n).cloned().collect()
}

pub fn config(net: &RoadNetwork, layers: usize, heads: usize, d: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig {
        layers,
        heads,
        d_model: d,
        d_ff: 2 * d,
        vocab: net.vocab_size(),
        max_len,
        dec_layers: 1,
        ln_eps: 1e-5,
        freeze_embeddings: true,
    }
}

/// Encoder with spatially smooth (frozen) edge embeddings.
pub fn encoder(net: &RoadNetwork, config: EncoderConfig, seed: u64) -> EncoderModel<f64> {
    let d = config.d_model;
    let mut m = EncoderModel::new(config, seed).unwrap();
    m.import_edge_embeddings(spatial_edge_embeddings(net, d, seed).unwrap()).unwrap();
    m
}
