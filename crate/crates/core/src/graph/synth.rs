//! Seeded synthetic source/target graph pairs with planted anomalies.
//!
//! Both domains share one set of latent community centroids and one latent
//! anomaly signature. Each domain is a stochastic block model with
//! geometrically decaying community sizes whose normal nodes draw features
//! around their community centroid. Anomalies are planted in small groups
//! wired into cliques. Half of the groups are structural (members also get
//! extra edges to random nodes of other communities), the rest are attribute
//! groups whose features are displaced along a jittered copy of the shared
//! signature. Normal nodes drift along the same signature by an exponential
//! amount, so both domains share a one-sided tail of mildly suspicious
//! normals. A fraction of normal nodes are benign outliers whose own
//! features are displaced along an individual random direction; their
//! neighborhoods stay normal. Target features are then
//! moved through a random rotation, a projection to the target
//! dimensionality and a per-feature affine rescale, all scaled by
//! `domain_shift`.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_graph_dir, AttributedGraph, Domain};
use crate::diffcore::Tensor2D;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub nodes: usize,
    pub dim: usize,
    pub anomaly_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPairConfig {
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Size ratio between consecutive communities; 1 gives equal sizes.
    pub community_decay: f64,
    /// Anomalies per planted group; members of a group form a clique.
    pub anomaly_group_size: usize,
    /// Extra cross-community edges per structural anomaly.
    pub structural_edges: usize,
    /// Displacement of attribute anomalies, as RMS per-coordinate shift in
    /// units of `feature_noise`.
    pub attribute_shift: f64,
    /// Weight of the per-group random direction mixed into the shared
    /// signature before normalisation.
    pub signature_jitter: f64,
    /// Mean offset of normal nodes along the anomaly signature, drawn from an
    /// exponential distribution, in the units of `attribute_shift`.
    pub signature_skew: f64,
    /// Fraction of normal nodes displaced as benign outliers.
    pub benign_fraction: f64,
    /// Displacement of benign outliers, in the units of `attribute_shift`.
    pub benign_shift: f64,
    /// Per-coordinate standard deviation of normal features around their centroid.
    pub feature_noise: f64,
    /// Strength of the target-domain rotation and affine rescale; 0 disables both.
    pub domain_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticPairConfig {
    fn default() -> Self {
        Self {
            source: DomainSpec {
                nodes: 1000,
                dim: 32,
                anomaly_ratio: 0.05,
            },
            target: DomainSpec {
                nodes: 800,
                dim: 24,
                anomaly_ratio: 0.05,
            },
            communities: 5,
            p_intra: 0.05,
            p_inter: 0.002,
            community_decay: 0.7,
            anomaly_group_size: 5,
            structural_edges: 10,
            attribute_shift: 1.0,
            signature_jitter: 0.5,
            signature_skew: 0.6,
            benign_fraction: 0.1,
            benign_shift: 2.0,
            feature_noise: 0.5,
            domain_shift: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticPairConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("source", &self.source), ("target", &self.target)] {
            if d.dim < 2 {
                return Err(Error::Config(format!("{name} dim must be >= 2, got {}", d.dim)));
            }
            if !(d.anomaly_ratio > 0.0 && d.anomaly_ratio <= 0.2) {
                return Err(Error::Config(format!(
                    "{name} anomaly ratio must be in (0, 0.2], got {}",
                    d.anomaly_ratio
                )));
            }
            if anomaly_count(d) == 0 {
                return Err(Error::Config(format!(
                    "{name}: ratio {} of {} nodes plants no anomaly",
                    d.anomaly_ratio, d.nodes
                )));
            }
            if d.nodes < 2 * self.communities.max(1) {
                return Err(Error::Config(format!(
                    "{name} needs at least two nodes per community"
                )));
            }
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.community_decay > 0.0 && self.community_decay <= 1.0) {
            return Err(Error::Config(format!(
                "community_decay must be in (0, 1], got {}",
                self.community_decay
            )));
        }
        if self.anomaly_group_size == 0 {
            return Err(Error::Config("anomaly_group_size must be >= 1".into()));
        }
        if self.communities < 2 {
            return Err(Error::Config("need at least two communities".into()));
        }
        if !(self.feature_noise > 0.0)
            || self.attribute_shift < 0.0
            || self.domain_shift < 0.0
            || self.signature_jitter < 0.0
            || self.benign_shift < 0.0
            || self.signature_skew < 0.0
            || !(0.0..=1.0).contains(&self.benign_fraction)
        {
            return Err(Error::Config(
                "feature_noise must be > 0; shifts and signature_jitter >= 0; benign_fraction in [0, 1]"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn anomaly_count(d: &DomainSpec) -> usize {
    (d.anomaly_ratio * d.nodes as f64).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Normal,
    Structural,
    Attribute,
}

#[derive(Clone, Debug)]
pub struct CdPair {
    pub source: AttributedGraph,
    pub target: AttributedGraph,
    pub source_kinds: Vec<AnomalyKind>,
    pub target_kinds: Vec<AnomalyKind>,
    pub source_communities: Vec<usize>,
    pub target_communities: Vec<usize>,
}

pub fn generate_cd_pair(cfg: &SyntheticPairConfig) -> Result<CdPair> {
    cfg.validate()?;
    let latent = cfg.source.dim;
    let mut crng = rng::stream(cfg.seed, "generator/centroids");
    let centroids = gaussian(&mut crng, cfg.communities, latent, 1.0);
    let signature = unit_vector(&mut crng, latent);

    let (xs, es, ks, cs) = domain_sample(cfg, &cfg.source, &centroids, &signature, "source")?;
    let (xt_latent, et, kt, ct) = domain_sample(cfg, &cfg.target, &centroids, &signature, "target")?;

    let mut srng = rng::stream(cfg.seed, "generator/shift");
    let xt = shift_domain(&mut srng, &xt_latent, cfg.target.dim, cfg.domain_shift)?;

    let labels = |k: &[AnomalyKind]| k.iter().map(|&k| u8::from(k != AnomalyKind::Normal)).collect();
    Ok(CdPair {
        source: AttributedGraph::from_edges(Domain::Source, xs, es, Some(labels(&ks)))?,
        target: AttributedGraph::from_edges(Domain::Target, xt, et, Some(labels(&kt)))?,
        source_kinds: ks,
        target_kinds: kt,
        source_communities: cs,
        target_communities: ct,
    })
}

type DomainDraw = (Tensor2D, Vec<(usize, usize)>, Vec<AnomalyKind>, Vec<usize>);

fn domain_sample(
    cfg: &SyntheticPairConfig,
    spec: &DomainSpec,
    centroids: &Tensor2D,
    signature: &[f64],
    name: &str,
) -> Result<DomainDraw> {
    let n = spec.nodes;
    let latent = centroids.cols();
    let community = community_blocks(n, cfg.communities, cfg.community_decay);

    let mut erng = rng::stream(cfg.seed, &format!("generator/{name}/edges"));
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if community[u] == community[v] {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if erng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut arng = rng::stream(cfg.seed, &format!("generator/{name}/anomalies"));
    let count = anomaly_count(spec);
    let chosen = index::sample(&mut arng, n, count).into_vec();
    let n_struct = count / 2;
    let mut kinds = vec![AnomalyKind::Normal; n];
    let mut groups: Vec<(AnomalyKind, &[usize])> = Vec::new();
    let (structural, attribute) = chosen.split_at(n_struct);
    for (kind, members) in [(AnomalyKind::Structural, structural), (AnomalyKind::Attribute, attribute)] {
        for &v in members {
            kinds[v] = kind;
        }
        groups.extend(members.chunks(cfg.anomaly_group_size).map(|g| (kind, g)));
    }

    for (_, g) in &groups {
        for (i, &u) in g.iter().enumerate() {
            for &v in &g[i + 1..] {
                edges.push((u.min(v), u.max(v)));
            }
        }
    }
    for &v in structural {
        let others: Vec<usize> = (0..n).filter(|&u| community[u] != community[v]).collect();
        let m = cfg.structural_edges.min(others.len());
        for j in index::sample(&mut arng, others.len(), m) {
            edges.push((v, others[j]));
        }
    }

    let mut frng = rng::stream(cfg.seed, &format!("generator/{name}/features"));
    let mut x = Tensor2D::zeros(n, latent);
    for v in 0..n {
        let c = centroids.row(community[v]);
        for (o, &m) in x.row_mut(v).iter_mut().zip(c) {
            *o = m + cfg.feature_noise * frng.sample::<f64, _>(StandardNormal);
        }
    }
    let norm = cfg.attribute_shift * cfg.feature_noise * (latent as f64).sqrt();
    let normals: Vec<usize> = (0..n).filter(|&v| kinds[v] == AnomalyKind::Normal).collect();
    if cfg.signature_skew > 0.0 {
        for &v in &normals {
            let t = cfg.signature_skew * norm * frng.sample::<f64, _>(Exp1);
            for (o, d) in x.row_mut(v).iter_mut().zip(signature) {
                *o += t * d;
            }
        }
    }
    let benign = (cfg.benign_fraction * normals.len() as f64).round() as usize;
    for i in index::sample(&mut frng, normals.len(), benign) {
        let dir = unit_vector(&mut frng, latent);
        for (o, d) in x.row_mut(normals[i]).iter_mut().zip(&dir) {
            *o += cfg.benign_shift * norm * d;
        }
    }
    for (_, g) in groups.iter().filter(|(k, _)| *k == AnomalyKind::Attribute) {
        let jitter = unit_vector(&mut frng, latent);
        let dir: Vec<f64> = signature
            .iter()
            .zip(&jitter)
            .map(|(s, j)| s + cfg.signature_jitter * j)
            .collect();
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
        for &v in g.iter() {
            for (o, d) in x.row_mut(v).iter_mut().zip(&dir) {
                *o += norm * d / len;
            }
        }
    }
    Ok((x, edges, kinds, community))
}

/// Contiguous community blocks with sizes proportional to `decay^j`, each
/// holding at least two nodes.
fn community_blocks(n: usize, k: usize, decay: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..k).map(|j| decay.powi(j as i32)).collect();
    let total: f64 = weights.iter().sum();
    let free = n - 2 * k;
    let mut sizes: Vec<usize> = weights.iter().map(|w| 2 + (free as f64 * w / total).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;
    sizes.iter().enumerate().flat_map(|(j, &s)| std::iter::repeat_n(j, s)).collect()
}

fn gaussian(rng: &mut StreamRng, rows: usize, cols: usize, scale: f64) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn unit_vector(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Modified Gram-Schmidt on the columns of `a` (rows >= cols).
fn orthonormal_columns(a: &Tensor2D) -> Tensor2D {
    let (m, n) = a.shape();
    let mut q = a.clone();
    for j in 0..n {
        for p in 0..j {
            let r: f64 = (0..m).map(|i| q.get(i, p) * q.get(i, j)).sum();
            for i in 0..m {
                let v = q.get(i, j) - r * q.get(i, p);
                q.set(i, j, v);
            }
        }
        let norm = (0..m).map(|i| q.get(i, j).powi(2)).sum::<f64>().sqrt();
        let sign = if q.get(j.min(m - 1), j) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            let v = sign * q.get(i, j) / norm;
            q.set(i, j, v);
        }
    }
    q
}

/// Rotation by the orthogonal factor of `I + s·G`, projection to `out_dim`
/// and per-feature affine rescale.
fn shift_domain(rng: &mut StreamRng, x: &Tensor2D, out_dim: usize, strength: f64) -> Result<Tensor2D> {
    let d = x.cols();
    let g = gaussian(rng, d, d, 1.0);
    let perturbed = Tensor2D::from_fn(d, d, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) + strength * g.get(i, j)
    });
    let rotation = orthonormal_columns(&perturbed);
    let mut y = x.matmul(&rotation)?;

    if out_dim != d {
        let proj = if out_dim < d {
            orthonormal_columns(&gaussian(rng, d, out_dim, 1.0))
        } else {
            orthonormal_columns(&gaussian(rng, out_dim, d, 1.0)).transpose()
        };
        y = y.matmul(&proj)?;
    }

    let scales: Vec<f64> = (0..out_dim)
        .map(|_| (0.5 * strength * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    let offsets: Vec<f64> = (0..out_dim)
        .map(|_| strength * rng.sample::<f64, _>(StandardNormal))
        .collect();
    for i in 0..y.rows() {
        for (j, v) in y.row_mut(i).iter_mut().enumerate() {
            *v = scales[j] * *v + offsets[j];
        }
    }
    Ok(y)
}

#[derive(Serialize)]
struct DomainStats {
    nodes: usize,
    edges: usize,
    dim: usize,
    anomalies: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SyntheticPairConfig,
    seed: u64,
    source: DomainStats,
    target: DomainStats,
}

fn stats(g: &AttributedGraph) -> DomainStats {
    DomainStats {
        nodes: g.node_count(),
        edges: g.edge_count(),
        dim: g.feature_dim(),
        anomalies: g
            .evaluation_labels()
            .map_or(0, |l| l.iter().filter(|&&y| y == 1).count()),
    }
}

/// Writes `source/`, `target/` and `manifest.json` under `dir`.
pub fn write_cd_pair(cfg: &SyntheticPairConfig, pair: &CdPair, dir: &Path) -> Result<()> {
    write_graph_dir(&pair.source, &dir.join("source"))?;
    write_graph_dir(&pair.target, &dir.join("target"))?;
    let manifest = Manifest {
        config: cfg,
        seed: cfg.seed,
        source: stats(&pair.source),
        target: stats(&pair.target),
    };
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}
