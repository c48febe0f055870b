//! Belief-conditioned latent actions.
//!
//! An encoder compresses a joint-velocity action into a low-dimensional
//! latent input given the state and belief; a decoder maps latent inputs
//! back to bounded actions in the same context.

pub mod mlp;
mod model;
mod train;

pub use model::{goal_distribution, z_grid, LatentModel, Normalization, MODEL_FORMAT, MODEL_VERSION};
pub use train::{loss, reconstruction_error, sample_contexts, train, Context, LossReport, TrainConfig, TrainOutcome};
