use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::config::{AlignMode, Detector, TrainConfig};
use super::selflabel::PseudoLabelSet;
use super::ScoreVector;
use crate::diffcore::{AdamConfig, AdamState, Tape, Tensor2D, Var};
use crate::encoder::{self, EncoderParams, ModelBundle, ScoreHeadParams};
use crate::graph::{AttributedGraph, Domain};
use crate::iforest::{ForestConfig, IsolationForest};
use crate::losses::{contrastive_on_tape, deviation_on_tape, sinkhorn_divergence, sinkhorn_on_tape};
use crate::rng::{self, derive_seed, StreamRng};
use crate::sampler::{layer_fanouts, sample_fanout, Sampler, SamplerConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainTrace {
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    pub labelled_nodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignTrace {
    pub mode: Option<AlignMode>,
    pub steps_per_epoch: usize,
    /// Mean Sinkhorn loss per epoch; empty when the domain loss is off.
    pub domain_losses: Vec<f64>,
    /// Mean contrastive loss per epoch; empty when it is off.
    pub contrastive_losses: Vec<f64>,
    /// Divergence between the monitored source normals and target nodes,
    /// before training (`[0]`) and after each epoch. Empty when the domain
    /// loss is off.
    pub monitor_divergence: Vec<f64>,
    /// Steps in which the Sinkhorn solver hit its iteration budget.
    pub unconverged_steps: usize,
    /// Wall-clock seconds spent inside Sinkhorn solves, if any ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkhorn_seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefitTrace {
    pub losses: Vec<f64>,
    pub pseudo_anomalies: usize,
    pub pseudo_normals: usize,
}

/// Source nodes whose labels training may read: per class, a uniform
/// `fraction` of the nodes (at least one of each class).
pub fn labelled_subset(g: &AttributedGraph, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("source graph has no training labels".into()))?;
    let anomalies: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let normals: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if anomalies.is_empty() || normals.is_empty() {
        return Err(Error::Config(format!(
            "source labels need both classes ({} anomalies, {} normals)",
            anomalies.len(),
            normals.len()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labelled fraction must lie in (0, 1], got {fraction}")));
    }
    let mut r = rng::stream(seed, "labelled");
    let mut pick = |pool: &[usize]| -> Vec<usize> {
        let k = ((fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
        index::sample(&mut r, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    };
    let mut chosen = pick(&anomalies);
    chosen.extend(pick(&normals));
    chosen.sort_unstable();
    Ok(chosen)
}

fn dims(input: usize, layers: &[usize]) -> Vec<usize> {
    std::iter::once(input).chain(layers.iter().copied()).collect()
}

fn grads_for(tape: &Tape, root: Var, vars: &[Var]) -> Result<Vec<Tensor2D>> {
    let g = tape.gradients(root)?;
    Ok(vars.iter().map(|&v| g.wrt(v)).collect())
}

fn check_loss(v: f64, stage: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Structural(format!("{stage} loss became non-finite")))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn deviation_batches(sampler: &mut Sampler, pool: &[usize], label: impl Fn(usize) -> u8, balanced: bool) -> Vec<Vec<usize>> {
    if !balanced {
        return sampler.epoch(pool);
    }
    let (anomalies, normals): (Vec<usize>, Vec<usize>) = pool.iter().partition(|&&v| label(v) == 1);
    sampler.balanced_epoch(&normals, &anomalies)
}

/// One deviation-loss step over `batch` with `labels[i]` for `batch[i]`.
#[allow(clippy::too_many_arguments)]
fn deviation_step(
    model: &mut ModelBundle,
    adam: &mut AdamState,
    g: &AttributedGraph,
    batch: &[usize],
    labels: &[u8],
    sampler: &mut Sampler,
    cfg: &TrainConfig,
    ref_rng: &mut StreamRng,
) -> Result<f64> {
    let sample = sampler.sample_fanout(g, batch, model.encoder.depth())?;
    let mut tape = Tape::new();
    let w = model.encoder.on_tape(&mut tape);
    let h = model.head.on_tape(&mut tape);
    let z = encoder::encode(&mut tape, &w, &model.encoder.activations, g, &sample)?;
    let s = encoder::score(&mut tape, h, z)?;
    let (mu, sigma) = cfg.deviation.reference_stats(ref_rng);
    let loss = deviation_on_tape(&mut tape, s, labels, mu, sigma, cfg.deviation.margin)?;
    let value = check_loss(tape.scalar(loss)?, "deviation")?;
    let vars: Vec<Var> = w.iter().copied().chain(h).collect();
    let grads = grads_for(&tape, loss, &vars)?;
    adam.step(&mut model.tensors_mut(), &grads)?;
    Ok(value)
}

/// Deviation-loss training of a fresh source encoder and head on the
/// labelled source nodes.
pub fn pretrain_source(g_s: &AttributedGraph, cfg: &TrainConfig) -> Result<(ModelBundle, PretrainTrace)> {
    cfg.validate()?;
    let pool = labelled_subset(g_s, cfg.labelled_fraction, cfg.seed)?;
    let labels = g_s.labels().expect("checked by labelled_subset");
    let mut init = rng::stream(cfg.seed, "init/source");
    let encoder = EncoderParams::init(&dims(g_s.feature_dim(), &cfg.source_layers), &mut init)?;
    let head = ScoreHeadParams::init(encoder.output_dim(), &mut init);
    let mut model = ModelBundle {
        encoder,
        head,
        domain: Domain::Source,
    };
    let mut adam = AdamState::new(model.tensors(), AdamConfig::with_lr(cfg.source_lr))?;
    let mut sampler = Sampler::new(cfg.sampler.clone(), derive_seed(cfg.seed, "pretrain"))?;
    let mut ref_rng = rng::stream(cfg.seed, "deviation/source");
    let mut trace = PretrainTrace {
        labelled_nodes: pool.len(),
        ..PretrainTrace::default()
    };
    for _ in 0..cfg.source_epochs {
        let mut losses = vec![];
        for batch in deviation_batches(&mut sampler, &pool, |v| labels[v], cfg.balanced_source_batches) {
            let y: Vec<u8> = batch.iter().map(|&v| labels[v]).collect();
            losses.push(deviation_step(&mut model, &mut adam, g_s, &batch, &y, &mut sampler, cfg, &mut ref_rng)?);
        }
        trace.losses.push(mean(&losses));
    }
    Ok((model, trace))
}

/// Embeddings of `nodes` (in order) drawing fanout neighborhoods from `rng`.
pub fn embed_nodes(
    enc: &EncoderParams,
    g: &AttributedGraph,
    nodes: &[usize],
    sampler: &SamplerConfig,
    rng: &mut StreamRng,
) -> Result<Tensor2D> {
    let fanouts = layer_fanouts(enc.depth(), &sampler.fanouts)?;
    let mut out = Vec::with_capacity(nodes.len() * enc.output_dim());
    for chunk in nodes.chunks(sampler.batch_size.max(1) * 4) {
        let sample = sample_fanout(g, chunk, &fanouts, rng);
        out.extend_from_slice(enc.encode(g, &sample)?.as_slice());
    }
    Tensor2D::from_vec(nodes.len(), enc.output_dim(), out)
}

/// Embeddings of every node of `g`, with fanouts drawn from the stream
/// `embed/<tag>` of the run seed.
pub fn embed_graph(enc: &EncoderParams, g: &AttributedGraph, cfg: &TrainConfig, tag: &str) -> Result<Tensor2D> {
    let nodes: Vec<usize> = (0..g.node_count()).collect();
    embed_nodes(enc, g, &nodes, &cfg.sampler, &mut rng::stream(cfg.seed, &format!("embed/{tag}")))
}

/// Target nodes usable as contrastive centres.
fn contrastive_pool(g: &AttributedGraph) -> Vec<usize> {
    let n = g.node_count();
    (0..n).filter(|&v| g.degree(v) > 0 && g.degree(v) + 1 < n).collect()
}

fn source_alignment_pool(g_s: &AttributedGraph, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let labelled = labelled_subset(g_s, cfg.labelled_fraction, cfg.seed)?;
    if !cfg.one_class_source_batches {
        return Ok(labelled);
    }
    let labels = g_s.labels().expect("checked by labelled_subset");
    Ok(labelled.into_iter().filter(|&v| labels[v] == 0).collect())
}

fn pick_subset(pool: &[usize], k: usize, r: &mut StreamRng) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut v: Vec<usize> = index::sample(r, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    v.sort_unstable();
    v
}

/// Trains a fresh target encoder against the frozen source encoder.
///
/// Each epoch reshuffles both domains and runs `min(source batches, target
/// batches)` steps. A step first updates the target encoder on the Sinkhorn
/// divergence between source and target centre embeddings, then on the
/// contrastive loss of the target batch, each with its own ADAM state.
pub fn joint_align(
    source: &ModelBundle,
    g_s: &AttributedGraph,
    g_t: &AttributedGraph,
    cfg: &TrainConfig,
    mode: AlignMode,
) -> Result<(EncoderParams, AlignTrace)> {
    cfg.validate()?;
    if source.encoder.input_dim() != g_s.feature_dim() {
        return Err(Error::Structural(format!(
            "source encoder expects {} features, source graph has {}",
            source.encoder.input_dim(),
            g_s.feature_dim()
        )));
    }
    let mut init = rng::stream(cfg.seed, "init/target");
    let mut psi_t = EncoderParams::init(&dims(g_t.feature_dim(), &cfg.target_layers), &mut init)?;
    if psi_t.output_dim() != source.encoder.output_dim() {
        return Err(Error::Config(format!(
            "target embeddings have {} dims, source {}",
            psi_t.output_dim(),
            source.encoder.output_dim()
        )));
    }
    let src_pool = source_alignment_pool(g_s, cfg)?;
    let tgt_pool = contrastive_pool(g_t);
    if src_pool.is_empty() || tgt_pool.is_empty() {
        return Err(Error::DegenerateGraph("alignment needs nonempty source and target pools".into()));
    }

    let adam_cfg = AdamConfig::with_lr(cfg.align_lr);
    let mut adam_dom = AdamState::new(psi_t.weights.iter(), adam_cfg)?;
    let mut adam_con = if cfg.shared_align_optimizer {
        None
    } else {
        Some(AdamState::new(psi_t.weights.iter(), adam_cfg)?)
    };
    let mut s_sampler = Sampler::new(cfg.sampler.clone(), derive_seed(cfg.seed, "align/source"))?;
    let mut t_sampler = Sampler::new(cfg.sampler.clone(), derive_seed(cfg.seed, "align/target"))?;
    let depth_s = source.encoder.depth();
    let depth_t = psi_t.depth();

    let mut trace = AlignTrace {
        mode: Some(mode),
        ..AlignTrace::default()
    };
    let mut sinkhorn_time = 0.0;

    // Fixed monitor sets, embedded with the same neighborhoods every epoch.
    let monitor = if mode.uses_domain_loss() {
        let mut r = rng::stream(cfg.seed, "monitor/nodes");
        let ms = pick_subset(&src_pool, cfg.monitor_nodes, &mut r);
        let mt = pick_subset(&(0..g_t.node_count()).collect::<Vec<_>>(), cfg.monitor_nodes, &mut r);
        let zs = embed_nodes(&source.encoder, g_s, &ms, &cfg.sampler, &mut rng::stream(cfg.seed, "monitor/source"))?;
        Some((zs, mt))
    } else {
        None
    };
    let record_monitor = |psi: &EncoderParams, trace: &mut AlignTrace, time: &mut f64| -> Result<()> {
        if let Some((zs, mt)) = &monitor {
            let zt = embed_nodes(psi, g_t, mt, &cfg.sampler, &mut rng::stream(cfg.seed, "monitor/target"))?;
            let t0 = Instant::now();
            let out = sinkhorn_divergence(zs, &zt, &cfg.sinkhorn)?;
            *time += t0.elapsed().as_secs_f64();
            trace.monitor_divergence.push(out.value);
        }
        Ok(())
    };
    record_monitor(&psi_t, &mut trace, &mut sinkhorn_time)?;

    for _ in 0..cfg.align_epochs {
        let src_batches = s_sampler.epoch(&src_pool);
        let tgt_batches = t_sampler.epoch(&tgt_pool);
        let steps = src_batches.len().min(tgt_batches.len());
        trace.steps_per_epoch = steps;
        let (mut dom_losses, mut con_losses) = (vec![], vec![]);
        for i in 0..steps {
            if mode.uses_domain_loss() {
                let ss = s_sampler.sample_fanout(g_s, &src_batches[i], depth_s)?;
                let zs = source.encoder.encode(g_s, &ss)?;
                let st = t_sampler.sample_fanout(g_t, &tgt_batches[i], depth_t)?;
                let mut tape = Tape::new();
                let w = psi_t.on_tape(&mut tape);
                let zt = encoder::encode(&mut tape, &w, &psi_t.activations, g_t, &st)?;
                let t0 = Instant::now();
                let (loss, out) = sinkhorn_on_tape(&mut tape, &zs, zt, &cfg.sinkhorn)?;
                sinkhorn_time += t0.elapsed().as_secs_f64();
                if !out.converged {
                    trace.unconverged_steps += 1;
                }
                dom_losses.push(check_loss(out.value, "sinkhorn")?);
                let grads = grads_for(&tape, loss, &w)?;
                adam_dom.step(&mut psi_t.weights.iter_mut().collect::<Vec<_>>(), &grads)?;
            }
            if mode.uses_contrastive_loss() {
                let batch = t_sampler.sample_batch(g_t, &tgt_batches[i])?;
                let b = batch.len();
                let st = t_sampler.sample_fanout(g_t, &batch.all_nodes(), depth_t)?;
                let mut tape = Tape::new();
                let w = psi_t.on_tape(&mut tape);
                let z = encoder::encode(&mut tape, &w, &psi_t.activations, g_t, &st)?;
                let range = |lo: usize, hi: usize| -> Arc<[usize]> { (lo..hi).collect() };
                let zu = tape.gather_rows(z, range(0, b))?;
                let zv = tape.gather_rows(z, range(b, 2 * b))?;
                let zvn = tape.gather_rows(z, range(2 * b, (2 + batch.q) * b))?;
                let loss = contrastive_on_tape(&mut tape, zu, zv, zvn, batch.q)?;
                con_losses.push(check_loss(tape.scalar(loss)?, "contrastive")?);
                let grads = grads_for(&tape, loss, &w)?;
                let adam = adam_con.as_mut().unwrap_or(&mut adam_dom);
                adam.step(&mut psi_t.weights.iter_mut().collect::<Vec<_>>(), &grads)?;
            }
        }
        if mode.uses_domain_loss() {
            trace.domain_losses.push(mean(&dom_losses));
        }
        if mode.uses_contrastive_loss() {
            trace.contrastive_losses.push(mean(&con_losses));
        }
        record_monitor(&psi_t, &mut trace, &mut sinkhorn_time)?;
    }
    if mode.uses_domain_loss() {
        trace.sinkhorn_seconds = Some(sinkhorn_time);
    }
    Ok((psi_t, trace))
}

/// Scores every target node with `bundle` (encoder then head).
pub fn score_target(bundle: &ModelBundle, g_t: &AttributedGraph, cfg: &TrainConfig, tag: &str) -> Result<ScoreVector> {
    let z = embed_graph(&bundle.encoder, g_t, cfg, tag)?;
    ScoreVector::new(bundle.head.score_rows(&z), tag)
}

/// Scores from the configured self-labelling detector on the aligned target
/// encoder.
pub fn detector_scores(
    psi_t: &EncoderParams,
    eta_s: &ScoreHeadParams,
    g_t: &AttributedGraph,
    cfg: &TrainConfig,
) -> Result<ScoreVector> {
    match cfg.detector {
        Detector::IsolationForest => {
            let z = embed_graph(psi_t, g_t, cfg, "aligned")?;
            let forest_cfg = ForestConfig {
                seed: derive_seed(cfg.seed, "forest"),
                ..cfg.forest
            };
            let forest = IsolationForest::fit(&z, &forest_cfg)?;
            ScoreVector::new(forest.score(&z)?, "act_if")
        }
        Detector::EtaS => {
            let bundle = ModelBundle {
                encoder: psi_t.clone(),
                head: eta_s.clone(),
                domain: Domain::Target,
            };
            score_target(&bundle, g_t, cfg, "eta_s")
        }
    }
}

/// Deviation-loss training on the pseudo-labelled target nodes, starting
/// from the aligned encoder with a fresh score head.
pub fn deviation_refit(
    g_t: &AttributedGraph,
    pseudo: &PseudoLabelSet,
    psi_t: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, RefitTrace)> {
    if pseudo.anomalies.is_empty() {
        return Err(Error::DegenerateSelection("no pseudo anomalies to refit on".into()));
    }
    if pseudo.normals.is_empty() {
        return Err(Error::DegenerateSelection("no pseudo normals to refit on".into()));
    }
    if pseudo.anomalies.iter().any(|v| pseudo.normals.contains(v)) {
        return Err(Error::Structural("pseudo anomalies and normals overlap".into()));
    }
    let n = g_t.node_count();
    let mut label = vec![None; n];
    for (v, y) in pseudo.labelled() {
        if v >= n {
            return Err(Error::Structural(format!("pseudo label for node {v} outside 0..{n}")));
        }
        label[v] = Some(y);
    }
    let pool: Vec<usize> = (0..n).filter(|&v| label[v].is_some()).collect();

    let mut init = rng::stream(cfg.seed, "init/refit-head");
    let mut model = ModelBundle {
        encoder: psi_t.clone(),
        head: ScoreHeadParams::init(psi_t.output_dim(), &mut init),
        domain: Domain::Target,
    };
    let mut adam = AdamState::new(model.tensors(), AdamConfig::with_lr(cfg.refit_lr))?;
    let mut sampler = Sampler::new(cfg.sampler.clone(), derive_seed(cfg.seed, "refit"))?;
    let mut ref_rng = rng::stream(cfg.seed, "deviation/target");
    let mut trace = RefitTrace {
        pseudo_anomalies: pseudo.anomalies.len(),
        pseudo_normals: pseudo.normals.len(),
        ..RefitTrace::default()
    };
    for _ in 0..cfg.refit_epochs {
        let mut losses = vec![];
        let batches = deviation_batches(&mut sampler, &pool, |v| label[v].unwrap_or(0), cfg.balanced_refit_batches);
        for batch in batches {
            let y: Vec<u8> = batch.iter().map(|&v| label[v].unwrap()).collect();
            losses.push(deviation_step(&mut model, &mut adam, g_t, &batch, &y, &mut sampler, cfg, &mut ref_rng)?);
        }
        trace.losses.push(mean(&losses));
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc_roc;
    use crate::graph::{generate_cd_pair, DomainSpec, SyntheticPairConfig};
    use crate::pipeline::self_label;

    fn small_pair() -> crate::graph::CdPair {
        generate_cd_pair(&SyntheticPairConfig {
            source: DomainSpec {
                nodes: 200,
                dim: 8,
                anomaly_ratio: 0.1,
            },
            target: DomainSpec {
                nodes: 160,
                dim: 6,
                anomaly_ratio: 0.1,
            },
            communities: 4,
            p_intra: 0.12,
            p_inter: 0.005,
            ..SyntheticPairConfig::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            source_epochs: 8,
            align_epochs: 3,
            refit_epochs: 3,
            source_layers: vec![16, 8],
            target_layers: vec![12, 8],
            sampler: SamplerConfig {
                batch_size: 32,
                fanouts: vec![5],
                ..SamplerConfig::default()
            },
            forest: ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
            monitor_nodes: 32,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn pretraining_separates_source_classes() {
        let pair = small_pair();
        let cfg = TrainConfig {
            source_epochs: 200,
            ..small_cfg()
        };
        let (m, trace) = pretrain_source(&pair.source, &cfg).unwrap();
        assert_eq!(trace.losses.len(), 200);
        let s = score_target(&m, &pair.source, &cfg, "src").unwrap();
        let l = pair.source.labels().unwrap();
        let anom: Vec<f64> = (0..l.len()).filter(|&i| l[i] == 1).map(|i| s.scores[i]).collect();
        let norm: Vec<f64> = (0..l.len()).filter(|&i| l[i] == 0).map(|i| s.scores[i]).collect();
        assert!(mean(&anom) - mean(&norm) >= cfg.deviation.margin / 2.0, "{} {}", mean(&anom), mean(&norm));
    }

    #[test]
    fn single_class_source_is_config_error() {
        let pair = small_pair();
        let n = pair.source.node_count();
        let g = AttributedGraph::from_edges(
            Domain::Source,
            pair.source.features().clone(),
            pair.source.edges(),
            Some(vec![0; n]),
        )
        .unwrap();
        assert!(matches!(pretrain_source(&g, &small_cfg()), Err(Error::Config(_))));
    }

    #[test]
    fn pretraining_is_bit_reproducible() {
        let pair = small_pair();
        let cfg = TrainConfig {
            source_epochs: 2,
            ..small_cfg()
        };
        let (a, _) = pretrain_source(&pair.source, &cfg).unwrap();
        let (b, _) = pretrain_source(&pair.source, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alignment_leaves_source_untouched_and_counts_steps() {
        let pair = small_pair();
        let cfg = small_cfg();
        let (src, _) = pretrain_source(&pair.source, &TrainConfig { source_epochs: 1, ..cfg.clone() }).unwrap();
        let before = src.clone();
        let (psi, trace) = joint_align(&src, &pair.source, &pair.target, &cfg, AlignMode::Joint).unwrap();
        assert_eq!(src, before);
        let n_s = source_alignment_pool(&pair.source, &cfg).unwrap().len().div_ceil(32);
        let n_t = contrastive_pool(&pair.target).len().div_ceil(32);
        assert_eq!(trace.steps_per_epoch, n_s.min(n_t));
        assert_eq!(trace.monitor_divergence.len(), cfg.align_epochs + 1);
        assert_eq!(psi.dims(), vec![6, 12, 8]);

        let (_, con) = joint_align(&src, &pair.source, &pair.target, &cfg, AlignMode::ContrastiveOnly).unwrap();
        assert!(con.monitor_divergence.is_empty() && con.sinkhorn_seconds.is_none());
        assert!(con.domain_losses.is_empty());
    }

    #[test]
    fn refit_ranks_pseudo_anomalies_higher() {
        let pair = small_pair();
        let cfg = TrainConfig {
            refit_epochs: 30,
            refit_lr: 1e-3,
            ..small_cfg()
        };
        let (src, _) = pretrain_source(&pair.source, &cfg).unwrap();
        let (psi, _) = joint_align(&src, &pair.source, &pair.target, &cfg, AlignMode::Joint).unwrap();
        let det = detector_scores(&psi, &src.head, &pair.target, &cfg).unwrap();
        let pseudo = self_label(&det, cfg.alpha, cfg.q_percentile).unwrap();
        let (m, _) = deviation_refit(&pair.target, &pseudo, &psi, &cfg).unwrap();
        let s = score_target(&m, &pair.target, &cfg, "full").unwrap();
        let pa: Vec<f64> = pseudo.anomalies.iter().map(|&v| s.scores[v]).collect();
        let pn: Vec<f64> = pseudo.normals.iter().map(|&v| s.scores[v]).collect();
        assert!(mean(&pa) > mean(&pn));
        assert_eq!(s.len(), pair.target.node_count());
        let y = pair.target.evaluation_labels().unwrap();
        assert!(auc_roc(&s.scores, y).unwrap().is_finite());
    }

    #[test]
    fn zero_epoch_refit_keeps_encoder() {
        let pair = small_pair();
        let cfg = TrainConfig {
            refit_epochs: 0,
            ..small_cfg()
        };
        let mut r = rng::stream(0, "enc");
        let psi = EncoderParams::init(&[6, 12, 8], &mut r).unwrap();
        let pseudo = PseudoLabelSet {
            anomalies: vec![0, 1],
            normals: vec![5, 6, 7],
        };
        let (m, trace) = deviation_refit(&pair.target, &pseudo, &psi, &cfg).unwrap();
        assert_eq!(m.encoder, psi);
        assert!(trace.losses.is_empty());
        let empty = PseudoLabelSet {
            anomalies: vec![],
            normals: vec![1],
        };
        assert!(matches!(
            deviation_refit(&pair.target, &empty, &psi, &cfg),
            Err(Error::DegenerateSelection(_))
        ));
    }

    #[test]
    fn labelled_fraction_is_stratified() {
        let pair = small_pair();
        let l = pair.source.labels().unwrap();
        let sub = labelled_subset(&pair.source, 0.05, 1).unwrap();
        let anomalies = sub.iter().filter(|&&v| l[v] == 1).count();
        assert_eq!(anomalies, 1);
        assert_eq!(sub.len() - anomalies, 9);
    }

    #[test]
    fn target_scoring_is_reproducible() {
        let pair = small_pair();
        let cfg = small_cfg();
        let mut r = rng::stream(0, "enc");
        let bundle = ModelBundle {
            encoder: EncoderParams::init(&[6, 12, 8], &mut r).unwrap(),
            head: ScoreHeadParams::init(8, &mut r),
            domain: Domain::Target,
        };
        let a = score_target(&bundle, &pair.target, &cfg, "x").unwrap();
        let b = score_target(&bundle, &pair.target, &cfg, "x").unwrap();
        assert_eq!(a, b);
    }
}
