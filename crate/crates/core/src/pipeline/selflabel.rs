use serde::{Deserialize, Serialize};

use super::ScoreVector;
use crate::{Error, Result};

/// Pseudo labels for the target refit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub anomalies: Vec<usize>,
    pub normals: Vec<usize>,
}

impl PseudoLabelSet {
    /// `(node, label)` pairs, anomalies first.
    pub fn labelled(&self) -> Vec<(usize, u8)> {
        self.anomalies
            .iter()
            .map(|&v| (v, 1))
            .chain(self.normals.iter().map(|&v| (v, 0)))
            .collect()
    }
}

/// Nodes whose score exceeds `mean + alpha * std` (population std), in id
/// order. An empty selection is an error.
pub fn cantelli_select(scores: &[f64], alpha: f64) -> Result<Vec<usize>> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateSelection("no scores".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + alpha * std;
    let picked: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    if picked.is_empty() {
        return Err(Error::DegenerateSelection(format!(
            "no score exceeds mean + {alpha}·std = {threshold}; decrease alpha"
        )));
    }
    Ok(picked)
}

/// The `ceil(q/100 · n)` lowest-scored nodes (nearest rank), ties broken by
/// node id, returned in id order.
pub fn bottom_percentile(scores: &[f64], q: f64) -> Vec<usize> {
    let k = ((q / 100.0) * scores.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k.clamp(1, scores.len().max(1)));
    order.sort_unstable();
    order
}

pub fn self_label(scores: &ScoreVector, alpha: f64, q: f64) -> Result<PseudoLabelSet> {
    if !(q > 0.0 && q < 100.0) {
        return Err(Error::Config(format!("q must lie in (0, 100), got {q}")));
    }
    let picked = cantelli_select(&scores.scores, alpha)?;
    let mut is_anomaly = vec![false; scores.len()];
    for &i in &picked {
        is_anomaly[i] = true;
    }
    let normals: Vec<usize> = bottom_percentile(&scores.scores, q)
        .into_iter()
        .filter(|&i| !is_anomaly[i])
        .map(|i| scores.node_ids[i])
        .collect();
    if normals.is_empty() {
        return Err(Error::DegenerateSelection("no pseudo normals remain".into()));
    }
    Ok(PseudoLabelSet {
        anomalies: picked.into_iter().map(|i| scores.node_ids[i]).collect(),
        normals,
    })
}
