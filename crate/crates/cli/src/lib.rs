//! Experiment harness for the distillab training laboratory: TOML
//! experiment configs, multi-seed execution with mean±std aggregation,
//! preset protocols, and CSV emission of summaries and weight
//! trajectories.

pub mod config;
pub mod experiment;
pub mod presets;
