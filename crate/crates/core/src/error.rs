use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit together.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Inputs violate a structural contract (ids out of range, missing rows, ...).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The graph cannot provide the samples the contrastive loss requires.
    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    /// Cantelli thresholding selected no pseudo anomalies.
    #[error("degenerate selection: {0}")]
    DegenerateSelection(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    /// A later training stage was requested before the stage it depends on.
    #[error("missing stage checkpoint: {stage}")]
    MissingStage { stage: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
