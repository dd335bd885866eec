use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbrConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GbrConfig {
    fn default() -> Self {
        GbrConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Least-squares gradient boosting over axis-aligned regression trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedRegressor {
    pub config: GbrConfig,
    pub init: f64,
    pub trees: Vec<Node>,
}

impl GradientBoostedRegressor {
    /// `features` holds one row of `dim` values per sample.
    pub fn fit(features: &[f64], dim: usize, targets: &[f64], config: GbrConfig) -> Result<Self> {
        let n = targets.len();
        if n < 2 {
            return Err(Error::invalid("boosting needs at least 2 samples"));
        }
        if dim == 0 || features.len() != n * dim {
            return Err(Error::shape("fit_gbr", format!("{} features for {} samples of width {}", features.len(), n, dim)));
        }
        if features.iter().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature or target"));
        }
        let init = targets.iter().sum::<f64>() / n as f64;
        let mut pred = vec![init; n];
        let mut trees = Vec::with_capacity(config.n_trees);
        let all: Vec<usize> = (0..n).collect();
        for _ in 0..config.n_trees {
            let residual: Vec<f64> = targets.iter().zip(&pred).map(|(y, p)| y - p).collect();
            let tree = grow(features, dim, &residual, &all, config.max_depth);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += config.learning_rate * tree.predict(&features[i * dim..(i + 1) * dim]);
            }
            trees.push(tree);
        }
        Ok(GradientBoostedRegressor { config, init, trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.config.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_rows(&self, features: &[f64], dim: usize) -> Vec<f64> {
        features.chunks(dim).map(|x| self.predict(x)).collect()
    }

    /// Prediction using only the first `k` trees.
    pub fn staged_predict(&self, x: &[f64], k: usize) -> f64 {
        self.init + self.config.learning_rate * self.trees[..k].iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

fn mean(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// Exact greedy split search by squared-error reduction.
fn grow(x: &[f64], dim: usize, y: &[f64], idx: &[usize], depth: usize) -> Node {
    let leaf = Node::Leaf(mean(y, idx));
    if depth == 0 || idx.len() < 2 {
        return leaf;
    }
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let n = idx.len() as f64;
    let base = total * total / n;
    let floor = 1e-12 * idx.iter().map(|&i| y[i] * y[i]).sum::<f64>();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for f in 0..dim {
        order.sort_by(|&a, &b| x[a * dim + f].total_cmp(&x[b * dim + f]).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 1..order.len() {
            left += y[order[k - 1]];
            let (lo, hi) = (x[order[k - 1] * dim + f], x[order[k] * dim + f]);
            if lo == hi {
                continue;
            }
            let (nl, nr) = (k as f64, n - k as f64);
            let right = total - left;
            // gain in explained sum of squares over the unsplit node
            let gain = left * left / nl + right * right / nr - base;
            if best.map_or(gain > floor, |(g, _, _)| gain > g) {
                best = Some((gain, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i * dim + feature] <= threshold);
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(x, dim, y, &l, depth - 1)),
        right: Box::new(grow(x, dim, y, &r, depth - 1)),
    }
}
