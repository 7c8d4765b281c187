//! File formats, image IO and the operator commands around `rpfnet-core`.

pub mod ablation;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod io;
pub mod report;

pub use checkpoint::Checkpoint;
pub use commands::{run, Command, CommandSpec};
pub use config::RunConfig;
