//! Configuration, the staged pipeline and the live session server.

mod config;
mod handler;
pub mod pipeline;
pub mod protocol;
mod server;

pub use config::{ExperimentConfig, Paths, SimulateConfig};
pub use handler::SessionServer;
pub use server::{bind, serve};
