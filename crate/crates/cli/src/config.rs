use std::fs;
use std::path::{Path, PathBuf};

use actgad::graph::{generate_cd_pair, load_graph_dir, AttributedGraph, Domain, SyntheticPairConfig};
use actgad::pipeline::TrainConfig;
use actgad::{Error, Result};
use serde::{Deserialize, Serialize};

/// Where the source and target graphs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Generate the pair in memory from a generator config.
    Synthetic(SyntheticPairConfig),
    /// Load two dataset directories; relative paths resolve against the
    /// config file's directory.
    Dirs { source: PathBuf, target: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticPairConfig::default()),
            train: TrainConfig::default(),
            out: PathBuf::from("runs/default"),
            seeds: vec![0, 1, 2, 3, 4],
            alphas: vec![2.0, 2.25, 2.5, 2.75, 3.0],
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Dirs { source, target } = &mut cfg.data {
            *source = base.join(&*source);
            *target = base.join(&*target);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        match &self.data {
            DataSource::Synthetic(g) => g.validate()?,
            DataSource::Dirs { source, target } => {
                for p in [source, target] {
                    if !p.is_dir() {
                        return Err(Error::Config(format!("dataset directory {} does not exist", p.display())));
                    }
                }
            }
        }
        self.train.validate()
    }

    pub fn load_pair(&self) -> Result<(AttributedGraph, AttributedGraph)> {
        match &self.data {
            DataSource::Synthetic(g) => {
                let pair = generate_cd_pair(g)?;
                Ok((pair.source, pair.target))
            }
            DataSource::Dirs { source, target } => Ok((
                load_graph_dir(source, Domain::Source)?,
                load_graph_dir(target, Domain::Target)?,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.json");
        fs::write(&p, r#"{"seeds": [7], "data": {"kind": "dirs", "source": "s", "target": "t"}}"#).unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(
            c.data,
            DataSource::Dirs {
                source: d.path().join("s"),
                target: d.path().join("t")
            }
        );
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let c = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
