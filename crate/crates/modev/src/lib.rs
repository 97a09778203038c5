//! Configuration, file formats and experiment runners on top of `modev-core`.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod formats;

pub use config::ExperimentConfig;
