//! Experiment runner on top of `scrm-core`: TOML configs in, CSV tables out.
#![allow(clippy::result_large_err)]

pub mod commands;
pub mod config;
pub mod format;

pub use commands::{cmd_estimators, cmd_run, cmd_sweep, LabError, Options};
pub use config::{parse_seeds, ConfigError, ExperimentConfig};
