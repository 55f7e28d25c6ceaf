//! Stage checkpoints and the per-seed driver.
//!
//! Layout under a run directory, per seed:
//!
//! ```text
//! seed-<s>/checkpoints/pretrain.{json,bin}       source encoder + head
//! seed-<s>/checkpoints/align.{json,bin}          target encoder + source head
//! seed-<s>/checkpoints/align-<mode>.{json,bin}   ablation alignments
//! seed-<s>/checkpoints/selflabel.{json,bin}      refit target encoder + head
//! seed-<s>/checkpoints/pseudo_labels.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AlignMode, TrainConfig, Variant};
use super::selflabel::{self_label, PseudoLabelSet};
use super::train::{
    deviation_refit, detector_scores, joint_align, pretrain_source, score_target, AlignTrace, PretrainTrace,
    RefitTrace,
};
use super::ScoreVector;
use crate::encoder::{checkpoint_paths, CheckpointMeta, EncoderParams, ModelBundle};
use crate::eval::MetricsReport;
use crate::graph::{AttributedGraph, Domain};
use crate::{Error, Result};

pub const PRETRAIN_STAGE: &str = "pretrain";
pub const ALIGN_STAGE: &str = "align";
pub const SELFLABEL_STAGE: &str = "selflabel";
const PSEUDO_FILE: &str = "pseudo_labels.json";

/// Which stages a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Align,
    Selflabel,
    All,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "align" => Ok(Stage::Align),
            "selflabel" => Ok(Stage::Selflabel),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }

    fn runs(self, s: Stage) -> bool {
        self == Stage::All || self == s
    }
}

fn align_name(mode: AlignMode) -> String {
    match mode {
        AlignMode::Joint => ALIGN_STAGE.to_string(),
        m => format!("{ALIGN_STAGE}-{}", m.as_str()),
    }
}

/// Checkpoint directory of one seed.
#[derive(Clone, Debug)]
pub struct RunStore {
    dir: PathBuf,
    seed: u64,
}

impl RunStore {
    pub fn new(out: &Path, seed: u64) -> Self {
        Self {
            dir: out.join(format!("seed-{seed}")),
            seed,
        }
    }

    pub fn seed_dir(&self) -> &Path {
        &self.dir
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    fn meta(&self, stage: &str) -> CheckpointMeta {
        CheckpointMeta {
            stage: stage.into(),
            seed: self.seed,
        }
    }

    fn load(&self, name: &str, stage: &str) -> Result<ModelBundle> {
        let (json, bin) = checkpoint_paths(&self.checkpoint_dir(), name);
        if !json.exists() || !bin.exists() {
            return Err(Error::MissingStage { stage: stage.into() });
        }
        Ok(ModelBundle::load(&self.checkpoint_dir(), name)?.0)
    }

    pub fn save_pretrain(&self, m: &ModelBundle) -> Result<()> {
        m.save(&self.checkpoint_dir(), PRETRAIN_STAGE, &self.meta(PRETRAIN_STAGE))
    }

    pub fn load_pretrain(&self) -> Result<ModelBundle> {
        self.load(PRETRAIN_STAGE, PRETRAIN_STAGE)
    }

    /// Stores the aligned target encoder together with the source head that
    /// scores it.
    pub fn save_align(&self, mode: AlignMode, m: &ModelBundle) -> Result<()> {
        m.save(&self.checkpoint_dir(), &align_name(mode), &self.meta(ALIGN_STAGE))
    }

    pub fn load_align(&self, mode: AlignMode) -> Result<ModelBundle> {
        self.load(&align_name(mode), ALIGN_STAGE)
    }

    pub fn save_selflabel(&self, m: &ModelBundle, pseudo: &PseudoLabelSet) -> Result<()> {
        m.save(&self.checkpoint_dir(), SELFLABEL_STAGE, &self.meta(SELFLABEL_STAGE))?;
        let p = self.checkpoint_dir().join(PSEUDO_FILE);
        fs::write(&p, serde_json::to_string_pretty(pseudo)? + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load_selflabel(&self) -> Result<(ModelBundle, PseudoLabelSet)> {
        let m = self.load(SELFLABEL_STAGE, SELFLABEL_STAGE)?;
        let p = self.checkpoint_dir().join(PSEUDO_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok((m, serde_json::from_str(&text)?))
    }
}

/// Everything one seed produced. `scores` and `metrics` are keyed by
/// variant name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub metrics: BTreeMap<String, MetricsReport>,
    #[serde(skip)]
    pub scores: BTreeMap<String, ScoreVector>,
    #[serde(skip)]
    pub pretrain: Option<PretrainTrace>,
    #[serde(skip)]
    pub align: BTreeMap<String, AlignTrace>,
    #[serde(skip)]
    pub refit: Option<RefitTrace>,
    #[serde(skip)]
    pub pseudo: Option<PseudoLabelSet>,
}

/// Models kept in memory between stages of one seed.
#[derive(Clone, Debug, Default)]
pub struct SeedArtifacts {
    pub source: Option<ModelBundle>,
    pub aligned: BTreeMap<AlignMode, EncoderParams>,
    pub refit: Option<ModelBundle>,
}

fn aligned_bundle(psi: &EncoderParams, source: &ModelBundle) -> ModelBundle {
    ModelBundle {
        encoder: psi.clone(),
        head: source.head.clone(),
        domain: Domain::Target,
    }
}

/// Runs `stage` for one seed, reading earlier stages from `store` when they
/// are not executed here, and scores every variant whose models are
/// available afterwards.
pub fn run_seed(
    g_s: &AttributedGraph,
    g_t: &AttributedGraph,
    cfg: &TrainConfig,
    variants: &[Variant],
    stage: Stage,
    store: Option<&RunStore>,
) -> Result<(SeedOutcome, SeedArtifacts)> {
    cfg.validate()?;
    let missing = |s: &str| Error::MissingStage { stage: s.into() };
    let mut out = SeedOutcome {
        seed: cfg.seed,
        ..SeedOutcome::default()
    };
    let mut art = SeedArtifacts::default();

    let source = if stage.runs(Stage::Pretrain) {
        let (m, trace) = pretrain_source(g_s, cfg)?;
        if let Some(st) = store {
            st.save_pretrain(&m)?;
        }
        out.pretrain = Some(trace);
        m
    } else {
        store.ok_or_else(|| missing(PRETRAIN_STAGE))?.load_pretrain()?
    };
    art.source = Some(source.clone());
    if stage == Stage::Pretrain {
        return Ok((out, art));
    }

    let mut modes: Vec<AlignMode> = variants.iter().map(|v| v.align_mode()).collect();
    modes.sort_unstable();
    modes.dedup();
    if stage.runs(Stage::Align) {
        for &mode in &modes {
            let (psi, trace) = joint_align(&source, g_s, g_t, cfg, mode)?;
            if let Some(st) = store {
                st.save_align(mode, &aligned_bundle(&psi, &source))?;
            }
            out.align.insert(mode.as_str().into(), trace);
            art.aligned.insert(mode, psi);
        }
    } else {
        let st = store.ok_or_else(|| missing(ALIGN_STAGE))?;
        if !modes.contains(&AlignMode::Joint) {
            modes.push(AlignMode::Joint);
        }
        for &mode in &modes {
            art.aligned.insert(mode, st.load_align(mode)?.encoder);
        }
    }

    let wants_full = variants.contains(&Variant::Full);
    if stage.runs(Stage::Selflabel) && wants_full {
        let psi = art.aligned.get(&AlignMode::Joint).ok_or_else(|| missing(ALIGN_STAGE))?;
        let det = detector_scores(psi, &source.head, g_t, cfg)?;
        let pseudo = self_label(&det, cfg.alpha, cfg.q_percentile)?;
        let (m, trace) = deviation_refit(g_t, &pseudo, psi, cfg)?;
        if let Some(st) = store {
            st.save_selflabel(&m, &pseudo)?;
        }
        out.refit = Some(trace);
        out.pseudo = Some(pseudo);
        art.refit = Some(m);
    }

    for &v in variants {
        let scores = match v {
            Variant::Full => match &art.refit {
                Some(m) => score_target(m, g_t, cfg, "full")?,
                None => continue,
            },
            Variant::ActIf => match art.aligned.get(&AlignMode::Joint) {
                Some(psi) => {
                    let c = TrainConfig {
                        detector: super::config::Detector::IsolationForest,
                        ..cfg.clone()
                    };
                    detector_scores(psi, &source.head, g_t, &c)?
                }
                None => continue,
            },
            other => match art.aligned.get(&other.align_mode()) {
                Some(psi) => score_target(&aligned_bundle(psi, &source), g_t, cfg, other.as_str())?,
                None => continue,
            },
        };
        if let Some(y) = g_t.evaluation_labels() {
            out.metrics.insert(v.as_str().into(), MetricsReport::compute(&scores.scores, y)?);
        }
        out.scores.insert(v.as_str().into(), scores);
    }
    Ok((out, art))
}
