//! Config-driven front end: simulate, discover, reliability, pipeline.

pub mod commands;
pub mod config;

pub use commands::{cmd_discover, cmd_pipeline, cmd_reliability, cmd_simulate, ModelSource, PipelineReport};
pub use config::{LoadedConfig, RunConfig};
