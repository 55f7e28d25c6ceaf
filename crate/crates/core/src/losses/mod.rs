//! Training objectives: topology contrastive loss, debiased Sinkhorn
//! divergence and deviation loss.

mod contrastive;
mod deviation;
mod sinkhorn;

pub use contrastive::{contrastive_loss, contrastive_on_tape};
pub use deviation::{deviation_loss, deviation_on_tape, DeviationConfig, DeviationReference};
pub use sinkhorn::{sinkhorn_divergence, sinkhorn_on_tape, SinkhornConfig, SinkhornOutput};
