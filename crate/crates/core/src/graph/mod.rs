//! Undirected attributed graphs.

mod io;
mod synth;

pub use io::{load_graph, load_graph_dir, write_graph_dir, EDGE_FILE, FEATURE_FILE, LABEL_FILE};
pub use synth::{generate_cd_pair, write_cd_pair, AnomalyKind, CdPair, DomainSpec, SyntheticPairConfig};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor2D;
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Attributed graph with sorted, symmetric, self-loop-free adjacency.
///
/// Source graphs carry training labels. Target graphs may carry labels for
/// evaluation only; those are reachable through
/// [`AttributedGraph::evaluation_labels`] and never through
/// [`AttributedGraph::labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    domain: Domain,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor2D,
    labels: Option<Vec<u8>>,
    held_out: Option<Vec<u8>>,
}

impl AttributedGraph {
    /// Builds a graph from an edge list. Edges are symmetrized and
    /// deduplicated; self-loops are dropped. For target graphs, `labels`
    /// are stored as held-out evaluation labels.
    pub fn from_edges(
        domain: Domain,
        features: Tensor2D,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Structural(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Structural(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|&&y| y > 1) {
                return Err(Error::Structural(format!("label {bad} is not 0/1")));
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        let (labels, held_out) = match domain {
            Domain::Source => (labels, None),
            Domain::Target => (None, labels),
        };
        Ok(Self {
            domain,
            offsets,
            neighbors,
            features,
            labels,
            held_out,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Training labels (source graphs only).
    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Ground truth kept aside for scoring a target graph. Training code
    /// must not call this.
    pub fn evaluation_labels(&self) -> Option<&[u8]> {
        self.held_out.as_deref().or(self.labels.as_deref())
    }

    /// Ground-truth labels regardless of role, used when writing files.
    fn any_labels(&self) -> Option<&[u8]> {
        self.labels.as_deref().or(self.held_out.as_deref())
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.degree(v) == 0).collect()
    }

    /// Subgraph induced by `keep` (ascending original ids), re-indexed.
    fn induced(&self, keep: &[usize], edges: &[(usize, usize)]) -> Result<Self> {
        let mut new_id = vec![usize::MAX; self.node_count()];
        for (i, &v) in keep.iter().enumerate() {
            new_id[v] = i;
        }
        let features = self.features.gather_rows(keep)?;
        let labels = self
            .any_labels()
            .map(|l| keep.iter().map(|&v| l[v]).collect::<Vec<u8>>());
        let remapped = edges.iter().filter_map(|&(u, v)| {
            let (a, b) = (new_id[u], new_id[v]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b))
        });
        Self::from_edges(self.domain, features, remapped, labels)
    }
}

/// Random edge down-sampling so that no node has more than `max_degree`
/// incident edges, followed by removal of isolated nodes.
///
/// Nodes are visited in id order; an over-degree node keeps a uniform random
/// subset of `max_degree` of its current edges. Returns the capped graph and,
/// for each of its nodes, the id it had in `g`.
pub fn cap_degree(g: &AttributedGraph, max_degree: usize, seed: u64) -> Result<(AttributedGraph, Vec<usize>)> {
    if max_degree == 0 {
        return Err(Error::Config("max_degree must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, "cap_degree");
    let n = g.node_count();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|v| g.neighbors(v).to_vec()).collect();
    for u in 0..n {
        let deg = adj[u].len();
        if deg <= max_degree {
            continue;
        }
        let mut keep_mask = vec![false; deg];
        for i in index::sample(&mut rng, deg, max_degree) {
            keep_mask[i] = true;
        }
        let current = std::mem::take(&mut adj[u]);
        for (i, v) in current.into_iter().enumerate() {
            if keep_mask[i] {
                adj[u].push(v);
            } else if let Ok(pos) = adj[v].binary_search(&u) {
                adj[v].remove(pos);
            }
        }
    }
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| adj[u].iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
        .collect();
    let keep: Vec<usize> = (0..n).filter(|&v| !adj[v].is_empty()).collect();
    let capped = g.induced(&keep, &edges)?;
    Ok((capped, keep))
}
