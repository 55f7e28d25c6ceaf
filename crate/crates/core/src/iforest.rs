//! Isolation Forest.
//!
//! Each tree isolates a uniform subsample by random axis-aligned splits; the
//! score of a point is `2^(-E[h(x)] / c(ψ))` where `h` is the path length
//! (plus `c(leaf size)` at non-singleton leaves) and `ψ` the subsample size.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor2D;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Harmonic number approximation `ln i + γ`.
pub fn harmonic(i: f64) -> f64 {
    i.ln() + EULER_GAMMA
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points; `c(n) = 2H(n-1) - 2(n-1)/n`, and 0 for `n <= 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * harmonic(n - 1.0) - 2.0 * (n - 1.0) / n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.subsample < 2 {
            return Err(Error::Config(format!(
                "isolation forest needs n_trees >= 1 and subsample >= 2 (got {}, {})",
                self.n_trees, self.subsample
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
    height_limit: usize,
}

impl IsolationTree {
    fn build(x: &Tensor2D, rows: Vec<usize>, height_limit: usize, rng: &mut StreamRng) -> Self {
        let mut t = Self {
            nodes: Vec::new(),
            height_limit,
        };
        t.grow(x, rows, 0, rng);
        t
    }

    fn grow(&mut self, x: &Tensor2D, rows: Vec<usize>, depth: usize, rng: &mut StreamRng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= self.height_limit || rows.len() <= 1 {
            return id;
        }
        // Only features that vary within the node can separate it.
        let ranges: Vec<(usize, f64, f64)> = (0..x.cols())
            .filter_map(|f| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &r in &rows {
                    let v = x.get(r, f);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = loop {
            let v = rng.random_range(lo..hi);
            if v > lo {
                break v;
            }
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x.get(i, feature) < value);
        let left = self.grow(x, l, depth + 1, rng);
        let right = self.grow(x, r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    pub fn path_length(&self, point: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0;
        loop {
            match self.nodes[id] {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    id = if point[feature] < value { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
            }
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn height_limit(&self) -> usize {
        self.height_limit
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    sample_size: usize,
    dim: usize,
}

impl IsolationForest {
    /// Fits `cfg.n_trees` trees, tree `k` drawing from its own stream of
    /// `cfg.seed`.
    pub fn fit(x: &Tensor2D, cfg: &ForestConfig) -> Result<Self> {
        cfg.validate()?;
        if x.rows() < 2 {
            return Err(Error::Config(format!("isolation forest needs >= 2 rows, got {}", x.rows())));
        }
        if !x.is_finite() {
            return Err(Error::Structural("isolation forest input has non-finite values".into()));
        }
        let psi = cfg.subsample.min(x.rows());
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..cfg.n_trees)
            .map(|k| {
                let mut r = rng::stream(cfg.seed, &format!("iforest/tree-{k}"));
                let mut rows = index::sample(&mut r, x.rows(), psi).into_vec();
                rows.sort_unstable();
                IsolationTree::build(x, rows, height_limit, &mut r)
            })
            .collect();
        Ok(Self {
            trees,
            sample_size: psi,
            dim: x.cols(),
        })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn mean_path_length(&self, point: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(point)).sum::<f64>() / self.trees.len() as f64
    }

    /// Anomaly scores in `(0, 1)`; higher is more anomalous.
    pub fn score(&self, x: &Tensor2D) -> Result<Vec<f64>> {
        if x.cols() != self.dim {
            return Err(Error::Structural(format!(
                "forest fitted on {} features, scoring {}",
                self.dim,
                x.cols()
            )));
        }
        let c = average_path_length(self.sample_size);
        Ok((0..x.rows())
            .map(|i| 2f64.powf(-self.mean_path_length(x.row(i)) / c))
            .collect())
    }
}
