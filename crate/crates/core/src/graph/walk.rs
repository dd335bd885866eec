use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};

use super::{jaccard, validate_path, EdgeId, Path, PathDataset, PathRecord, RoadNetwork, VertexId};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Restarts allowed per walk before giving up.
pub const WALK_RETRIES: usize = 100;

/// Log-scale spread of the per-edge congestion factor in synthetic labels.
pub const TRAVEL_TIME_SIGMA: f64 = 0.2;

/// Expands `n_seeds` random start vertices into walks of exactly
/// `walk_length` edges, `repeats` times each.
///
/// Walks never reuse an edge or turn straight back; at a dead end the walk
/// restarts from its start vertex.
pub fn generate_synthetic_paths(
    network: &RoadNetwork,
    n_seeds: usize,
    walk_length: usize,
    repeats: usize,
    seed: u64,
) -> Result<PathDataset> {
    if walk_length < 2 {
        return Err(Error::invalid(format!("walk length must be at least 2, got {}", walk_length)));
    }
    let starts: Vec<VertexId> = network
        .vertices()
        .filter(|&v| !network.out_edges(v).is_empty())
        .collect();
    if starts.is_empty() {
        return Err(Error::Walk("network has no edges".into()));
    }
    let mut rng = rng::fork(seed, "walks");
    let seeds: Vec<VertexId> = if n_seeds <= starts.len() {
        index::sample(&mut rng, starts.len(), n_seeds)
            .into_iter()
            .map(|i| starts[i])
            .collect()
    } else {
        (0..n_seeds).map(|_| starts[rng.random_range(0..starts.len())]).collect()
    };

    let mut records = Vec::with_capacity(n_seeds * repeats);
    for _ in 0..repeats {
        for &start in &seeds {
            let edges = random_walk(network, start, walk_length, &mut rng)?;
            let path = Path::new(edges)?;
            debug_assert!(validate_path(network, &path).is_ok());
            records.push(PathRecord::unlabeled(records.len() as u64, path));
        }
    }
    PathDataset::new(records)
}

fn random_walk(network: &RoadNetwork, start: VertexId, length: usize, rng: &mut Rng) -> Result<Vec<EdgeId>> {
    let mut restarts = 0;
    let mut edges: Vec<EdgeId> = Vec::with_capacity(length);
    let mut used: HashSet<EdgeId> = HashSet::with_capacity(length);
    let mut at = start;
    while edges.len() < length {
        let back = edges.last().map(|&e| network.edge(e).expect("walk edge").src);
        let candidates: Vec<EdgeId> = network
            .out_edges(at)
            .iter()
            .copied()
            .filter(|e| !used.contains(e) && Some(network.edge(*e).unwrap().dst) != back)
            .collect();
        if candidates.is_empty() {
            restarts += 1;
            if restarts > WALK_RETRIES {
                return Err(Error::Walk(format!(
                    "no walk of length {} from vertex {} after {} restarts",
                    length, start, WALK_RETRIES
                )));
            }
            edges.clear();
            used.clear();
            at = start;
            continue;
        }
        let e = candidates[rng.random_range(0..candidates.len())];
        edges.push(e);
        used.insert(e);
        at = network.edge(e).unwrap().dst;
    }
    Ok(edges)
}

/// Travel time of `path`: base times scaled by independent log-normal
/// congestion factors with log-scale `sigma` (0 disables noise).
pub fn synth_travel_time(network: &RoadNetwork, path: &Path, sigma: f64, noise_seed: u64) -> Result<f64> {
    validate_path(network, path)?;
    let base = path.edges().iter().map(|&e| network.edge(e).unwrap().base_time_s);
    if sigma == 0.0 {
        return Ok(base.sum());
    }
    let factor = LogNormal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::fork(noise_seed, "travel-time");
    Ok(base.map(|t| t * factor.sample(&mut rng)).sum())
}

/// The trajectory path (score 1) followed by `k` distinct alternative routes
/// between the same endpoints, each scored by edge-set Jaccard similarity.
///
/// Alternatives are shortest paths under randomly perturbed travel times,
/// with edges of the trajectory penalised to encourage diversity, some of
/// them forced through a vertex the trajectory visits.
pub fn ranking_candidates(network: &RoadNetwork, trajectory: &Path, k: usize, seed: u64) -> Result<Vec<(Path, f64)>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    validate_path(network, trajectory)?;
    let origin = network.edge(trajectory.edges()[0]).unwrap().src;
    let destination = network.edge(*trajectory.edges().last().unwrap()).unwrap().dst;
    let on_route: HashSet<EdgeId> = trajectory.edges().iter().copied().collect();
    let interior: Vec<VertexId> = trajectory.edges()[..trajectory.len() - 1]
        .iter()
        .map(|&e| network.edge(e).unwrap().dst)
        .filter(|&v| v != origin)
        .collect();
    if origin == destination && interior.is_empty() {
        return Err(Error::Walk("round trip visits no other vertex".into()));
    }

    let mut rng = rng::fork(seed, "ranking");
    let noise = LogNormal::new(0.0, 0.6).expect("valid log-normal");
    let mut seen: HashSet<Vec<EdgeId>> = HashSet::new();
    seen.insert(trajectory.edges().to_vec());
    let mut out = vec![(trajectory.clone(), 1.0)];
    let budget = 50 * k;
    for attempt in 0..budget {
        if out.len() > k {
            break;
        }
        let weights: HashMap<EdgeId, f64> = network
            .edges()
            .map(|(id, e)| {
                let penalty = if on_route.contains(&id) { 1.5 } else { 1.0 };
                (id, e.base_time_s * penalty * noise.sample(&mut rng))
            })
            .collect();
        // A round trip has no shortest route of its own, and nearby endpoints
        // have few; every other attempt goes via an interior vertex.
        let route = if origin == destination || (attempt % 2 == 1 && !interior.is_empty()) {
            let via = interior[rng.random_range(0..interior.len())];
            shortest_path(network, origin, via, &weights)
                .zip(shortest_path(network, via, destination, &weights))
                .map(|(mut a, b)| {
                    a.extend(b);
                    a
                })
        } else {
            shortest_path(network, origin, destination, &weights)
        };
        let Some(route) = route else { continue };
        if route.len() < 2 || !seen.insert(route.clone()) {
            continue;
        }
        let score = jaccard(&route, trajectory.edges());
        out.push((Path::new(route)?, score));
    }
    if out.len() <= k {
        return Err(Error::Walk(format!(
            "found {} of {} alternative routes after {} attempts",
            out.len() - 1,
            k,
            budget
        )));
    }
    Ok(out)
}

#[derive(PartialEq)]
struct Frontier(f64, VertexId);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn shortest_path(
    network: &RoadNetwork,
    from: VertexId,
    to: VertexId,
    weights: &HashMap<EdgeId, f64>,
) -> Option<Vec<EdgeId>> {
    let mut dist: HashMap<VertexId, f64> = HashMap::new();
    let mut via: HashMap<VertexId, EdgeId> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(from, 0.0);
    heap.push(Frontier(0.0, from));
    while let Some(Frontier(d, v)) = heap.pop() {
        if v == to {
            break;
        }
        if d > dist[&v] {
            continue;
        }
        for &e in network.out_edges(v) {
            let w = network.edge(e).unwrap().dst;
            let nd = d + weights[&e];
            if dist.get(&w).is_none_or(|&old| nd < old) {
                dist.insert(w, nd);
                via.insert(w, e);
                heap.push(Frontier(nd, w));
            }
        }
    }
    if from == to || !via.contains_key(&to) {
        return None;
    }
    let mut route = Vec::new();
    let mut at = to;
    while at != from {
        let e = via[&at];
        route.push(e);
        at = network.edge(e).unwrap().src;
    }
    route.reverse();
    Some(route)
}
