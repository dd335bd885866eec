//! Road networks, paths, synthetic datasets and their file formats.

mod dataset;
mod embed;
pub mod io;
mod network;
mod path;
mod walk;

pub(crate) use dataset::check_labels;
pub use embed::{spatial_edge_embeddings, EMBEDDING_HOPS};
pub use dataset::{PathDataset, PathRecord, Split};
pub use network::{generate_grid_network, Edge, EdgeId, RoadNetwork, VertexId};
pub use path::{jaccard, validate_path, Path, SparsePath};
pub use walk::{
    generate_synthetic_paths, ranking_candidates, synth_travel_time, TRAVEL_TIME_SIGMA, WALK_RETRIES,
};
