//! Cross-domain graph anomaly detection.
//!
//! A labelled source graph is used to train a deviation-loss anomaly scorer.
//! A target-graph encoder is then aligned to the source normal class with a
//! debiased Sinkhorn divergence while a topology contrastive loss keeps its
//! representations faithful to the target graph. Finally an Isolation Forest
//! on the aligned target embeddings produces pseudo labels, and a target
//! scorer is refit on them with the same deviation loss.
//!
//! Module map:
//!
//! - [`diffcore`]: dense tensors, a reverse-mode tape and ADAM.
//! - [`graph`]: attributed graphs, file ingestion, degree capping and the
//!   synthetic cross-domain benchmark generator.
//! - [`sampler`]: centre/positive/negative batches and fanout neighborhoods.
//! - [`encoder`]: mean-aggregating message-passing encoder and score head.
//! - [`losses`]: contrastive, Sinkhorn alignment and deviation losses.
//! - [`iforest`]: Isolation Forest.
//! - [`eval`]: AUC-ROC / AUC-PR and run summaries.
//! - [`pipeline`]: the three training stages, self labelling and ablations.

pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod iforest;
pub mod losses;
pub mod pipeline;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
