//! Ranking metrics and seed aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Groups of tied scores in ascending score order: `(anomalies, normals)`.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i] == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Mann-Whitney estimate of `P(s_anomaly > s_normal) + P(equal)/2`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut below = 0u64;
    let mut twice = 0u64;
    for (p, n) in tie_groups(scores, labels) {
        twice += 2 * p * below + p * n;
        below += n;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

/// Average precision over a descending-score sweep with tied scores
/// entering together.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    let mut tp = 0u64;
    let mut seen = 0u64;
    let mut ap = 0.0;
    for (p, n) in tie_groups(scores, labels).into_iter().rev() {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub prevalence: f64,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let (pos, _) = check(scores, labels)?;
        Ok(Self {
            auc_roc: auc_roc(scores, labels)?,
            auc_pr: auc_pr(scores, labels)?,
            prevalence: pos as f64 / labels.len() as f64,
        })
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<SeedReport>,
    pub auc_roc: MeanStd,
    pub auc_pr: MeanStd,
    pub prevalence: f64,
}

impl RunSummary {
    /// `mean±std` strings for AUC-ROC and AUC-PR.
    pub fn formatted(&self) -> (String, String) {
        (self.auc_roc.to_string(), self.auc_pr.to_string())
    }
}

pub fn summarize_runs(runs: &[SeedReport]) -> Result<RunSummary> {
    if runs.is_empty() {
        return Err(Error::Metric("no runs to summarize".into()));
    }
    let roc: Vec<f64> = runs.iter().map(|r| r.metrics.auc_roc).collect();
    let pr: Vec<f64> = runs.iter().map(|r| r.metrics.auc_pr).collect();
    let prev: Vec<f64> = runs.iter().map(|r| r.metrics.prevalence).collect();
    Ok(RunSummary {
        runs: runs.to_vec(),
        auc_roc: MeanStd::of(&roc),
        auc_pr: MeanStd::of(&pr),
        prevalence: MeanStd::of(&prev).mean,
    })
}
