//! Mean-aggregating message-passing encoder and the affine score head.
//!
//! Layer `k` computes `h_v = act(W_k · mean({h_v} ∪ {h_u : u ∈ sampled N(v)}))`
//! with `h_v` at layer 0 equal to the raw feature row. Hidden layers use ReLU
//! and the output layer is linear.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor2D, Var};
use crate::graph::{AttributedGraph, Domain};
use crate::rng::StreamRng;
use crate::sampler::LayeredSample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `weights[k]` maps layer-k inputs (rows) to layer-k outputs (cols).
    pub weights: Vec<Tensor2D>,
    pub activations: Vec<Activation>,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn uniform_init(rng: &mut StreamRng, fan_in: usize, fan_out: usize) -> Tensor2D {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor2D::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound))
}

impl EncoderParams {
    /// `dims = [input, hidden..., output]`; ReLU except on the last layer.
    pub fn init(dims: &[usize], rng: &mut StreamRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid encoder dims {dims:?}")));
        }
        let layers = dims.len() - 1;
        Ok(Self {
            weights: dims.windows(2).map(|w| uniform_init(rng, w[0], w[1])).collect(),
            activations: (0..layers)
                .map(|k| if k + 1 == layers { Activation::Linear } else { Activation::Relu })
                .collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].rows()];
        d.extend(self.weights.iter().map(Tensor2D::cols));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Tensor2D::cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.activations.len() {
            return Err(Error::Structural("encoder needs one activation per layer".into()));
        }
        for (k, w) in self.weights.windows(2).enumerate() {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Structural(format!(
                    "layer {} outputs {} dims but layer {} expects {}",
                    k + 1,
                    w[0].cols(),
                    k + 2,
                    w[1].rows()
                )));
            }
        }
        if !self.weights.iter().all(Tensor2D::is_finite) {
            return Err(Error::Structural("non-finite encoder weight".into()));
        }
        Ok(())
    }

    /// Leaves for every weight matrix, in layer order.
    pub fn on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights.iter().map(|w| tape.leaf(w.clone())).collect()
    }

    /// Embeddings of `sample`'s requested nodes without recording gradients
    /// beyond the returned tape.
    pub fn encode(&self, g: &AttributedGraph, sample: &LayeredSample) -> Result<Tensor2D> {
        let mut tape = Tape::new();
        let w = self.on_tape(&mut tape);
        let z = encode(&mut tape, &w, &self.activations, g, sample)?;
        Ok(tape.value(z).clone())
    }
}

/// Records the forward pass; returns a `|requested| × M` node.
pub fn encode(
    tape: &mut Tape,
    weights: &[Var],
    activations: &[Activation],
    g: &AttributedGraph,
    sample: &LayeredSample,
) -> Result<Var> {
    if sample.depth() != weights.len() {
        return Err(Error::Structural(format!(
            "sample covers {} layers, encoder has {}",
            sample.depth(),
            weights.len()
        )));
    }
    let w1 = tape.value(weights[0]).rows();
    if g.feature_dim() != w1 {
        return Err(Error::Structural(format!(
            "graph has {} features but the first layer expects {w1}",
            g.feature_dim()
        )));
    }
    let x = g.features().gather_rows(sample.input_nodes())?;
    let mut h = tape.leaf(x);
    for (k, (&w, act)) in weights.iter().zip(activations).enumerate() {
        let agg = tape.segment_mean(h, sample.groups[k].clone())?;
        let lin = tape.matmul(agg, w)?;
        h = match act {
            Activation::Relu => tape.relu(lin),
            Activation::Linear => lin,
        };
    }
    tape.gather_rows(h, sample.output_rows.clone())
}

/// Affine scoring unit `w · z + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHeadParams {
    /// M×1 column.
    pub weight: Tensor2D,
    /// 1×1.
    pub bias: Tensor2D,
}

impl ScoreHeadParams {
    pub fn init(dim: usize, rng: &mut StreamRng) -> Self {
        Self {
            weight: uniform_init(rng, dim, 1),
            bias: Tensor2D::scalar(0.0),
        }
    }

    pub fn new(weight: &[f64], bias: f64) -> Self {
        Self {
            weight: Tensor2D::column(weight),
            bias: Tensor2D::scalar(bias),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        crate::diffcore::dot(self.weight.as_slice(), z) + self.bias.as_slice()[0]
    }

    pub fn score_rows(&self, z: &Tensor2D) -> Vec<f64> {
        (0..z.rows()).map(|i| self.score(z.row(i))).collect()
    }

    pub fn on_tape(&self, tape: &mut Tape) -> [Var; 2] {
        [tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone())]
    }
}

/// `n×1` scores of the embedding rows in `z`.
pub fn score(tape: &mut Tape, head: [Var; 2], z: Var) -> Result<Var> {
    let lin = tape.matmul(z, head[0])?;
    tape.add_scalar(lin, head[1])
}

/// Encoder plus score head for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub encoder: EncoderParams,
    pub head: ScoreHeadParams,
    pub domain: Domain,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head.dim() != self.encoder.output_dim() {
            return Err(Error::Structural(format!(
                "head expects {} dims, encoder outputs {}",
                self.head.dim(),
                self.encoder.output_dim()
            )));
        }
        Ok(())
    }

    /// All trainable tensors: encoder weights, then head weight and bias.
    pub fn tensors(&self) -> Vec<&Tensor2D> {
        let mut v: Vec<&Tensor2D> = self.encoder.weights.iter().collect();
        v.push(&self.head.weight);
        v.push(&self.head.bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut v: Vec<&mut Tensor2D> = self.encoder.weights.iter_mut().collect();
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }

    pub fn save(&self, dir: &Path, name: &str, meta: &CheckpointMeta) -> Result<()> {
        save_checkpoint(self, dir, name, meta)
    }

    pub fn load(dir: &Path, name: &str) -> Result<(Self, CheckpointMeta)> {
        load_checkpoint(dir, name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    domain: Domain,
    stage: String,
    seed: u64,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "f64-le";

pub fn checkpoint_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.bin")))
}

fn save_checkpoint(m: &ModelBundle, dir: &Path, name: &str, meta: &CheckpointMeta) -> Result<()> {
    m.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layers = m.encoder.depth();
    let mut tensors: Vec<TensorEntry> = m
        .encoder
        .weights
        .iter()
        .enumerate()
        .map(|(k, w)| TensorEntry {
            name: format!("encoder.w{}", k + 1),
            rows: w.rows(),
            cols: w.cols(),
        })
        .collect();
    tensors.push(TensorEntry {
        name: "head.weight".into(),
        rows: m.head.weight.rows(),
        cols: 1,
    });
    tensors.push(TensorEntry {
        name: "head.bias".into(),
        rows: 1,
        cols: 1,
    });
    debug_assert_eq!(tensors.len(), layers + 2);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        domain: m.domain,
        stage: meta.stage.clone(),
        seed: meta.seed,
        dims: m.encoder.dims(),
        activations: m.encoder.activations.clone(),
        tensors,
    };
    let mut bin = Vec::new();
    for t in m.tensors() {
        for v in t.as_slice() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let (jp, bp) = checkpoint_paths(dir, name);
    fs::write(&jp, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&jp, e))?;
    fs::write(&bp, bin).map_err(|e| Error::io(&bp, e))
}

fn load_checkpoint(dir: &Path, name: &str) -> Result<(ModelBundle, CheckpointMeta)> {
    let (jp, bp) = checkpoint_paths(dir, name);
    let text = fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Structural(format!("unknown checkpoint format {}", manifest.format)));
    }
    let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if bytes.len() != expected {
        return Err(Error::Structural(format!(
            "{} holds {} bytes, manifest declares {expected}",
            bp.display(),
            bytes.len()
        )));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let count = t.rows * t.cols;
        let data = bytes[offset..offset + count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += count * 8;
        tensors.push(Tensor2D::from_vec(t.rows, t.cols, data)?);
    }
    let layers = manifest.activations.len();
    if tensors.len() != layers + 2 {
        return Err(Error::Structural("checkpoint tensor count does not match depth".into()));
    }
    let bias = tensors.pop().unwrap();
    let weight = tensors.pop().unwrap();
    let bundle = ModelBundle {
        encoder: EncoderParams {
            weights: tensors,
            activations: manifest.activations,
        },
        head: ScoreHeadParams { weight, bias },
        domain: manifest.domain,
    };
    bundle.validate()?;
    if bundle.encoder.dims() != manifest.dims {
        return Err(Error::Structural("checkpoint dims disagree with tensors".into()));
    }
    Ok((
        bundle,
        CheckpointMeta {
            stage: manifest.stage,
            seed: manifest.seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_check;
    use crate::rng;
    use crate::sampler::{layer_fanouts, sample_fanout};

    fn graph(feats: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> AttributedGraph {
        AttributedGraph::from_edges(
            Domain::Source,
            Tensor2D::from_rows(&feats).unwrap(),
            edges.iter().copied(),
            None,
        )
        .unwrap()
    }

    fn identity_encoder(d: usize, layers: usize, act: Activation) -> EncoderParams {
        EncoderParams {
            weights: vec![Tensor2D::identity(d); layers],
            activations: vec![act; layers],
        }
    }

    fn full_sample(g: &AttributedGraph, nodes: &[usize], depth: usize) -> LayeredSample {
        sample_fanout(g, nodes, &vec![None; depth], &mut rng::stream(0, "t"))
    }

    #[test]
    fn node_without_neighbors_keeps_its_features() {
        let g = graph(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], &[(0, 1)]);
        let enc = identity_encoder(2, 1, Activation::Linear);
        let z = enc.encode(&g, &full_sample(&g, &[2], 1)).unwrap();
        assert_eq!(z.row(0), &[5.0, 6.0]);
    }

    #[test]
    fn one_neighbor_mean_then_relu() {
        let g = graph(vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[(0, 1)]);
        let enc = identity_encoder(2, 1, Activation::Relu);
        let z = enc.encode(&g, &full_sample(&g, &[0], 1)).unwrap();
        assert_eq!(z.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn benchmark_sized_output_shape() {
        let n = 300;
        let d = 8000;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = AttributedGraph::from_edges(
            Domain::Source,
            Tensor2D::from_fn(n, d, |i, j| ((i * 31 + j) % 7) as f64 * 0.01),
            edges,
            None,
        )
        .unwrap();
        let enc = EncoderParams::init(&[d, 256, 256, 64], &mut rng::stream(1, "init")).unwrap();
        let nodes: Vec<usize> = (0..128).collect();
        let s = sample_fanout(&g, &nodes, &layer_fanouts(3, &[25, 10]).unwrap(), &mut rng::stream(1, "s"));
        assert_eq!(enc.encode(&g, &s).unwrap().shape(), (128, 64));
    }

    #[test]
    fn feature_dim_mismatch_is_structural() {
        let g = graph(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], &[(0, 1)]);
        let enc = identity_encoder(2, 1, Activation::Relu);
        assert!(matches!(
            enc.encode(&g, &full_sample(&g, &[0], 1)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn score_head_is_affine() {
        let h = ScoreHeadParams::new(&[0.0; 4], 0.7);
        assert_eq!(h.score(&[1.0, -2.0, 3.0, 9.0]), 0.7);
        let h = ScoreHeadParams::new(&[1.0, 0.0, 0.0], 0.0);
        assert_eq!(h.score(&[3.0, 5.0, -1.0]), 3.0);
    }

    #[test]
    fn score_gradient_wrt_embedding_is_weight() {
        let head = ScoreHeadParams::new(&[0.3, -1.2, 2.0], 0.1);
        let z = Tensor2D::from_vec(1, 3, vec![0.5, 0.25, -1.0]).unwrap();
        let expr = |t: &mut Tape, x: &[Var]| {
            let hv = head.on_tape(t);
            let s = score(t, hv, x[0])?;
            Ok(t.sum(s))
        };
        let (_, g) = crate::diffcore::evaluate_with_gradients(&[z.clone()], expr).unwrap();
        assert_eq!(g[0].as_slice(), &[0.3, -1.2, 2.0]);
        assert!(finite_difference_check(&[z], expr, 1e-6).unwrap() < 1e-8);
    }

    #[test]
    fn permuting_batch_permutes_rows() {
        let feats: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 1.0]).collect();
        let g = graph(feats, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        let enc = EncoderParams::init(&[3, 5, 4], &mut rng::stream(2, "init")).unwrap();
        let a = enc.encode(&g, &full_sample(&g, &[0, 1, 2, 3, 4, 5], 2)).unwrap();
        let perm = [4, 2, 5, 0, 3, 1];
        let b = enc.encode(&g, &full_sample(&g, &perm, 2)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (x, y) in b.row(i).iter().zip(a.row(p)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regular_graph_constant_features_is_fixed_point() {
        let n = 8;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = graph(vec![vec![0.4, -1.0, 2.0]; n], &edges);
        let enc = identity_encoder(3, 3, Activation::Linear);
        let z = enc.encode(&g, &full_sample(&g, &(0..n).collect::<Vec<_>>(), 3)).unwrap();
        for i in 0..n {
            assert_eq!(z.row(i), &[0.4, -1.0, 2.0]);
        }
    }

    #[test]
    fn backprop_through_encoder_matches_finite_differences() {
        let mut r = rng::stream(5, "graph");
        let n = 20;
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.extend((0..15).map(|_| (r.random_range(0..n), r.random_range(0..n))));
        let g = graph(feats, &edges);
        let enc = EncoderParams::init(&[4, 6, 5, 3], &mut rng::stream(5, "init")).unwrap();
        let sample = full_sample(&g, &(0..n).collect::<Vec<_>>(), 3);
        let acts = enc.activations.clone();
        let expr = |t: &mut Tape, w: &[Var]| -> Result<Var> {
            let z = encode(t, w, &acts, &g, &sample)?;
            let sq = t.mul(z, z)?;
            let sg = t.sigmoid(sq);
            t.mean(sg)
        };
        let err = finite_difference_check(&enc.weights, expr, 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let mut r = rng::stream(3, "init");
        let m = ModelBundle {
            encoder: EncoderParams::init(&[5, 7, 4], &mut r).unwrap(),
            head: ScoreHeadParams::init(4, &mut r),
            domain: Domain::Target,
        };
        let meta = CheckpointMeta {
            stage: "align".into(),
            seed: 3,
        };
        m.save(d.path(), "model", &meta).unwrap();
        let (back, bm) = ModelBundle::load(d.path(), "model").unwrap();
        assert_eq!(back, m);
        assert_eq!(bm, meta);
        let bin = fs::read(d.path().join("model.bin")).unwrap();
        assert_eq!(bin.len(), (5 * 7 + 7 * 4 + 4 + 1) * 8);
        assert_eq!(&bin[..8], &m.encoder.weights[0].as_slice()[0].to_le_bytes());
    }
}
