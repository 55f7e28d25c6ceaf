//! Source pretraining, target alignment, self labelling and refit.

mod ablation;
mod config;
mod selflabel;
mod stages;
mod train;

pub use ablation::{run_ablation, score_raw_iforest, summarize, sweep_alpha, AblationOutcome, AlphaRow};
pub use config::{AlignMode, Detector, TrainConfig, Variant};
pub use selflabel::{bottom_percentile, cantelli_select, self_label, PseudoLabelSet};
pub use stages::{run_seed, RunStore, SeedArtifacts, SeedOutcome, Stage, ALIGN_STAGE, PRETRAIN_STAGE, SELFLABEL_STAGE};
pub use train::{
    deviation_refit, detector_scores, embed_graph, embed_nodes, joint_align, labelled_subset, pretrain_source,
    score_target, AlignTrace, PretrainTrace, RefitTrace,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Anomaly scores for every node of a graph; higher is more anomalous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub node_ids: Vec<usize>,
    /// Which scorer produced the values.
    pub provenance: String,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Structural(format!("non-finite score at node {i}")));
        }
        Ok(Self {
            node_ids: (0..scores.len()).collect(),
            scores,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}
