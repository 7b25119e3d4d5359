//! Pipelines behind the `gaitcontour` binary.

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;
