use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::iforest::ForestConfig;
use crate::losses::{DeviationConfig, SinkhornConfig};
use crate::sampler::SamplerConfig;
use crate::{Error, Result};

/// Scorer whose output drives self labelling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Isolation Forest on aligned target embeddings.
    #[default]
    IsolationForest,
    /// The frozen source score head applied to aligned target embeddings.
    EtaS,
}

/// Which objectives update the target encoder during alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    Joint,
    ContrastiveOnly,
    DomainOnly,
}

impl AlignMode {
    pub fn uses_domain_loss(self) -> bool {
        self != AlignMode::ContrastiveOnly
    }

    pub fn uses_contrastive_loss(self) -> bool {
        self != AlignMode::DomainOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlignMode::Joint => "joint",
            AlignMode::ContrastiveOnly => "con_only",
            AlignMode::DomainOnly => "dom_only",
        }
    }
}

/// Ablation variants. `con_only`, `dom_only`, `joint` and `eta_s` score
/// target nodes with the source head on the aligned target encoder;
/// `act_if` scores with an Isolation Forest on the jointly aligned
/// embeddings; `full` adds self labelling and the deviation refit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConOnly,
    DomOnly,
    Joint,
    EtaS,
    ActIf,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::ConOnly,
        Variant::DomOnly,
        Variant::Joint,
        Variant::EtaS,
        Variant::ActIf,
        Variant::Full,
    ];

    pub fn align_mode(self) -> AlignMode {
        match self {
            Variant::ConOnly => AlignMode::ContrastiveOnly,
            Variant::DomOnly => AlignMode::DomainOnly,
            _ => AlignMode::Joint,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ConOnly => "con_only",
            Variant::DomOnly => "dom_only",
            Variant::Joint => "joint",
            Variant::EtaS => "eta_s",
            Variant::ActIf => "act_if",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub source_epochs: usize,
    pub source_lr: f64,
    pub align_epochs: usize,
    pub align_lr: f64,
    pub refit_epochs: usize,
    pub refit_lr: f64,
    /// Layer widths after the input layer of the source encoder.
    pub source_layers: Vec<usize>,
    /// Layer widths after the input layer of the target encoder.
    pub target_layers: Vec<usize>,
    pub sampler: SamplerConfig,
    pub sinkhorn: SinkhornConfig,
    pub deviation: DeviationConfig,
    /// Tree count and subsample size; the forest seed is derived from `seed`.
    pub forest: ForestConfig,
    pub alpha: f64,
    /// Percentile of lowest-scored target nodes used as pseudo normals.
    pub q_percentile: f64,
    /// Draw source pretraining batches half from labelled anomalies.
    pub balanced_source_batches: bool,
    /// Draw refit batches half from pseudo anomalies.
    pub balanced_refit_batches: bool,
    /// Restrict the alignment source batches to labelled normal nodes.
    pub one_class_source_batches: bool,
    /// One ADAM state for both alignment steps instead of one per loss.
    pub shared_align_optimizer: bool,
    /// Fraction of source nodes whose labels are visible (per class).
    pub labelled_fraction: f64,
    pub detector: Detector,
    /// Nodes per domain used to track the Sinkhorn divergence each epoch.
    pub monitor_nodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            source_epochs: 50,
            source_lr: 1e-3,
            align_epochs: 50,
            align_lr: 1e-4,
            refit_epochs: 50,
            refit_lr: 1e-4,
            source_layers: vec![256, 256, 64],
            target_layers: vec![64, 64, 64],
            sampler: SamplerConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            deviation: DeviationConfig::default(),
            forest: ForestConfig::default(),
            alpha: 2.5,
            q_percentile: 25.0,
            balanced_source_batches: true,
            balanced_refit_batches: false,
            one_class_source_batches: true,
            shared_align_optimizer: true,
            labelled_fraction: 1.0,
            detector: Detector::IsolationForest,
            monitor_nodes: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("source_lr", self.source_lr),
            ("align_lr", self.align_lr),
            ("refit_lr", self.refit_lr),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.source_epochs == 0 || self.align_epochs == 0 {
            return Err(Error::Config("source_epochs and align_epochs must be >= 1".into()));
        }
        if self.source_layers.is_empty() || self.target_layers.is_empty() {
            return Err(Error::Config("encoders need at least one layer".into()));
        }
        if self.source_layers.last() != self.target_layers.last() {
            return Err(Error::Config(format!(
                "source and target embedding widths differ ({:?} vs {:?})",
                self.source_layers.last(),
                self.target_layers.last()
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.q_percentile > 0.0 && self.q_percentile < 100.0) {
            return Err(Error::Config(format!("q must lie in (0, 100), got {}", self.q_percentile)));
        }
        if !(self.labelled_fraction > 0.0 && self.labelled_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "labelled_fraction must lie in (0, 1], got {}",
                self.labelled_fraction
            )));
        }
        if self.monitor_nodes == 0 {
            return Err(Error::Config("monitor_nodes must be >= 1".into()));
        }
        self.sampler.validate()?;
        self.sinkhorn.validate()?;
        self.deviation.validate()?;
        self.forest.validate()
    }
}
