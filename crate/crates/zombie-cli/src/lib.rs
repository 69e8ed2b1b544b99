//! Batch experiment runner: scenario configs in, CSV/SVG reports out.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, ConfigError, Experiment, ResolvedScenario, Scenario};
pub use runner::{run_batch, BatchOutcome, RunOptions};
