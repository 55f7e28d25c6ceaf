use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::selflabel::self_label;
use super::stages::{run_seed, SeedOutcome, Stage};
use super::train::{detector_scores, deviation_refit, score_target};
use super::ScoreVector;
use crate::encoder::{EncoderParams, ScoreHeadParams};
use crate::eval::{summarize_runs, MetricsReport, RunSummary, SeedReport};
use crate::graph::AttributedGraph;
use crate::iforest::{ForestConfig, IsolationForest};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub seeds: Vec<SeedOutcome>,
    /// Aggregate per variant name.
    pub summary: BTreeMap<String, RunSummary>,
}

pub fn summarize(seeds: &[SeedOutcome]) -> Result<BTreeMap<String, RunSummary>> {
    let mut per: BTreeMap<String, Vec<SeedReport>> = BTreeMap::new();
    for s in seeds {
        for (k, m) in &s.metrics {
            per.entry(k.clone()).or_default().push(SeedReport {
                seed: s.seed,
                metrics: *m,
            });
        }
    }
    per.into_iter().map(|(k, runs)| Ok((k, summarize_runs(&runs)?))).collect()
}

/// All stages for every seed, scoring each requested variant. All variants
/// of a seed share its pretrained source model.
pub fn run_ablation(
    g_s: &AttributedGraph,
    g_t: &AttributedGraph,
    cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (o, _) = run_seed(g_s, g_t, &cfg.with_seed(seed), variants, Stage::All, None)?;
        outcomes.push(o);
    }
    Ok(AblationOutcome {
        summary: summarize(&outcomes)?,
        seeds: outcomes,
    })
}

/// Isolation Forest on the raw target features.
pub fn score_raw_iforest(g_t: &AttributedGraph, cfg: &TrainConfig) -> Result<ScoreVector> {
    let forest_cfg = ForestConfig {
        seed: derive_seed(cfg.seed, "forest/raw"),
        ..cfg.forest
    };
    let f = IsolationForest::fit(g_t.features(), &forest_cfg)?;
    ScoreVector::new(f.score(g_t.features())?, "if_raw")
}

/// One row of an α sweep; `metrics` is `None` when the selection was empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub metrics: Option<MetricsReport>,
}

/// Self labelling and refit for each α from one aligned encoder.
pub fn sweep_alpha(
    g_t: &AttributedGraph,
    psi_t: &EncoderParams,
    eta_s: &ScoreHeadParams,
    cfg: &TrainConfig,
    alphas: &[f64],
) -> Result<Vec<AlphaRow>> {
    let labels = g_t
        .evaluation_labels()
        .ok_or_else(|| Error::Config("target graph has no evaluation labels".into()))?;
    let det = detector_scores(psi_t, eta_s, g_t, cfg)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
        }
        let pseudo = match self_label(&det, alpha, cfg.q_percentile) {
            Ok(p) => p,
            Err(Error::DegenerateSelection(_)) => {
                rows.push(AlphaRow { alpha, metrics: None });
                continue;
            }
            Err(e) => return Err(e),
        };
        let (m, _) = deviation_refit(g_t, &pseudo, psi_t, cfg)?;
        let s = score_target(&m, g_t, cfg, "full")?;
        rows.push(AlphaRow {
            alpha,
            metrics: Some(MetricsReport::compute(&s.scores, labels)?),
        });
    }
    Ok(rows)
}
