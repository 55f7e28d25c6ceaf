//! Training batches and fanout neighborhoods.
//!
//! A [`NodeBatch`] holds centre nodes, one first-order neighbor per centre as
//! positive and `negatives` non-neighbors per centre. A [`LayeredSample`]
//! records, for every encoder layer, which neighbors each node aggregates.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::AttributedGraph;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDistribution {
    /// Uniform over nodes outside the closed neighborhood of the centre.
    #[default]
    Uniform,
    /// Proportional to degree^0.75, restricted to the same complement.
    DegreeWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// Negatives per centre (Q).
    pub negatives: usize,
    /// Neighbor sample sizes, outermost layer first. With one entry fewer
    /// than the encoder depth, the innermost hop aggregates every neighbor.
    pub fanouts: Vec<usize>,
    #[serde(default)]
    pub negative_distribution: NegativeDistribution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            negatives: 5,
            fanouts: vec![25, 10],
            negative_distribution: NegativeDistribution::Uniform,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives == 0 || self.fanouts.is_empty() {
            return Err(Error::Config(
                "sampler needs batch_size >= 1, negatives >= 1 and at least one fanout".into(),
            ));
        }
        if self.fanouts.contains(&0) {
            return Err(Error::Config("fanouts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-layer fanouts indexed from the input side (`[0]` = layer 1), `None`
/// meaning the full neighborhood.
pub fn layer_fanouts(depth: usize, fanouts: &[usize]) -> Result<Vec<Option<usize>>> {
    let mut out: Vec<Option<usize>> = fanouts.iter().rev().map(|&f| Some(f)).collect();
    match depth.checked_sub(fanouts.len()) {
        Some(0) => {}
        Some(1) => out.insert(0, None),
        _ => {
            return Err(Error::Config(format!(
                "{} fanouts for an encoder of depth {depth}",
                fanouts.len()
            )))
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeBatch {
    pub centres: Vec<usize>,
    pub positives: Vec<usize>,
    /// `negatives[i * q .. (i + 1) * q]` belong to `centres[i]`.
    pub negatives: Vec<usize>,
    pub q: usize,
}

impl NodeBatch {
    /// Centres, then positives, then negatives.
    pub fn all_nodes(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.centres.len() * (2 + self.q));
        v.extend_from_slice(&self.centres);
        v.extend_from_slice(&self.positives);
        v.extend_from_slice(&self.negatives);
        v
    }

    pub fn len(&self) -> usize {
        self.centres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centres.is_empty()
    }

    /// Checks the batch against the graph's adjacency.
    pub fn check(&self, g: &AttributedGraph) -> bool {
        self.positives.len() == self.centres.len()
            && self.negatives.len() == self.q * self.centres.len()
            && self.centres.iter().enumerate().all(|(i, &u)| {
                g.has_edge(u, self.positives[i])
                    && self.negatives[i * self.q..(i + 1) * self.q]
                        .iter()
                        .all(|&n| n != u && !g.has_edge(u, n))
            })
    }
}

/// Neighborhoods needed to encode a list of nodes with a K-layer encoder.
///
/// `node_sets[K]` holds the distinct requested nodes; `node_sets[k - 1]`
/// starts with `node_sets[k]` and appends the neighbors sampled for layer
/// `k`. `groups[k - 1][i]` lists positions in `node_sets[k - 1]` averaged to
/// form node `i` of layer `k`, the node itself first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredSample {
    pub node_sets: Vec<Vec<usize>>,
    pub groups: Vec<Arc<Vec<Vec<usize>>>>,
    /// Row of `node_sets[K]` for each requested node, in request order.
    pub output_rows: Arc<[usize]>,
}

impl LayeredSample {
    pub fn depth(&self) -> usize {
        self.groups.len()
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.node_sets[0]
    }
}

/// Samples `min(fanout, degree)` distinct neighbors per node and layer.
pub fn sample_fanout(
    g: &AttributedGraph,
    nodes: &[usize],
    fanouts: &[Option<usize>],
    rng: &mut StreamRng,
) -> LayeredSample {
    let depth = fanouts.len();
    let n = g.node_count();
    let mut pos = vec![usize::MAX; n];

    let mut top = Vec::new();
    let output_rows: Vec<usize> = nodes
        .iter()
        .map(|&v| {
            if pos[v] == usize::MAX {
                pos[v] = top.len();
                top.push(v);
            }
            pos[v]
        })
        .collect();

    let mut node_sets = vec![Vec::new(); depth + 1];
    let mut groups = vec![Arc::new(Vec::new()); depth];
    node_sets[depth] = top;
    for layer in (1..=depth).rev() {
        // positions are rebuilt for the lower set; it starts with the upper one
        let upper = std::mem::take(&mut node_sets[layer]);
        for &v in &upper {
            pos[v] = usize::MAX;
        }
        let mut lower = Vec::with_capacity(upper.len() * 4);
        for &v in &upper {
            pos[v] = lower.len();
            lower.push(v);
        }
        let mut layer_groups = Vec::with_capacity(upper.len());
        for (i, &v) in upper.iter().enumerate() {
            let nb = g.neighbors(v);
            let mut grp = Vec::with_capacity(1 + nb.len());
            grp.push(i);
            let mut add = |u: usize, lower: &mut Vec<usize>| {
                if pos[u] == usize::MAX {
                    pos[u] = lower.len();
                    lower.push(u);
                }
                grp.push(pos[u]);
            };
            match fanouts[layer - 1] {
                Some(f) if f < nb.len() => {
                    let mut picked = index::sample(rng, nb.len(), f).into_vec();
                    picked.sort_unstable();
                    for j in picked {
                        add(nb[j], &mut lower);
                    }
                }
                _ => {
                    for &u in nb {
                        add(u, &mut lower);
                    }
                }
            }
            layer_groups.push(grp);
        }
        for &v in &lower {
            pos[v] = usize::MAX;
        }
        node_sets[layer] = upper;
        node_sets[layer - 1] = lower;
        groups[layer - 1] = Arc::new(layer_groups);
    }
    LayeredSample {
        node_sets,
        groups,
        output_rows: Arc::from(output_rows),
    }
}

/// Owns the RNG stream for batches drawn from one graph.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub cfg: SamplerConfig,
    rng: StreamRng,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: rng::stream(seed, "sampler"),
        })
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Fresh permutation of `pool` cut into batches of `batch_size`; the last
    /// batch may be partial.
    pub fn epoch(&mut self, pool: &[usize]) -> Vec<Vec<usize>> {
        let mut order = pool.to_vec();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Class-balanced epoch: a fresh permutation of `normals` cut into
    /// chunks of `batch_size / 2`, each paired with as many anomalies drawn
    /// by cycling through reshuffled copies of `anomalies`. Every normal
    /// appears once; anomalies are oversampled. Falls back to [`Self::epoch`]
    /// over the normals when `anomalies` is empty.
    pub fn balanced_epoch(&mut self, normals: &[usize], anomalies: &[usize]) -> Vec<Vec<usize>> {
        if anomalies.is_empty() {
            return self.epoch(normals);
        }
        let half = (self.cfg.batch_size / 2).max(1);
        let mut order = normals.to_vec();
        order.shuffle(&mut self.rng);
        let mut cycle: Vec<usize> = Vec::new();
        let mut batches = Vec::with_capacity(order.len().div_ceil(half));
        for chunk in order.chunks(half) {
            let mut b = chunk.to_vec();
            while b.len() < 2 * chunk.len() {
                if cycle.is_empty() {
                    cycle = anomalies.to_vec();
                    cycle.shuffle(&mut self.rng);
                }
                b.push(cycle.pop().expect("refilled above"));
            }
            batches.push(b);
        }
        batches
    }

    pub fn sample_batch(&mut self, g: &AttributedGraph, centres: &[usize]) -> Result<NodeBatch> {
        let n = g.node_count();
        let q = self.cfg.negatives;
        let weights = match self.cfg.negative_distribution {
            NegativeDistribution::Uniform => None,
            NegativeDistribution::DegreeWeighted => {
                let mut acc = 0.0;
                Some(
                    (0..n)
                        .map(|v| {
                            acc += (g.degree(v) as f64).powf(0.75);
                            acc
                        })
                        .collect::<Vec<f64>>(),
                )
            }
        };
        let mut positives = Vec::with_capacity(centres.len());
        let mut negatives = Vec::with_capacity(centres.len() * q);
        for &u in centres {
            let nb = g.neighbors(u);
            if nb.is_empty() {
                return Err(Error::DegenerateGraph(format!("node {u} has no neighbors")));
            }
            if nb.len() + 1 >= n {
                return Err(Error::DegenerateGraph(format!(
                    "node {u} is adjacent to every other node; no negative exists"
                )));
            }
            positives.push(nb[self.rng.random_range(0..nb.len())]);
            for _ in 0..q {
                let v = loop {
                    let c = match &weights {
                        None => self.rng.random_range(0..n),
                        Some(cum) => {
                            let total = *cum.last().unwrap();
                            let r = self.rng.random::<f64>() * total;
                            cum.partition_point(|&c| c <= r).min(n - 1)
                        }
                    };
                    if c != u && nb.binary_search(&c).is_err() {
                        break c;
                    }
                };
                negatives.push(v);
            }
        }
        Ok(NodeBatch {
            centres: centres.to_vec(),
            positives,
            negatives,
            q,
        })
    }

    pub fn sample_fanout(&mut self, g: &AttributedGraph, nodes: &[usize], depth: usize) -> Result<LayeredSample> {
        let f = layer_fanouts(depth, &self.cfg.fanouts)?;
        Ok(sample_fanout(g, nodes, &f, &mut self.rng))
    }
}
