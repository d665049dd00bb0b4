//! Experiment surface for the DRAFT laboratory: configuration files,
//! regime recipes, run artifacts and comparison reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod ini;
pub mod recipe;
pub mod report;
pub mod summary;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, Result};
pub use summary::Summary;
