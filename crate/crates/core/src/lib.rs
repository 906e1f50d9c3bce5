//! Adaptive depth networks.
//!
//! Every residual stage is split into a mandatory prefix and a skippable
//! suffix. A boolean skip vector selects, per stage, whether the suffix runs,
//! giving `2^N` parameter-sharing sub-networks from one set of weights.
//! Normalisation layers in mandatory blocks carry two parameter/statistic
//! sets, switched by their own stage's skip flag. Training uses two passes
//! per batch: cross-entropy on the full network, then KL self-distillation of
//! the shallowest network towards it.

pub mod adaptive;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod training;

pub use error::{Error, Result};
