pub mod belief;
pub mod control;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod humans;
pub mod kinematics;
pub mod latent;
pub mod service;
pub mod world;

pub use error::{Error, Result};
