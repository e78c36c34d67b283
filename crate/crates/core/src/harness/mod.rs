//! Monte-Carlo campaigns and their CSV outputs.

pub mod config;
pub mod experiments;

pub use config::{ExperimentConfig, PatternConfig, TrainingNoise};
pub use experiments::*;
