//! Experiment harness around `storm_core`: JSON configs, parallel grids,
//! CSV/JSON outputs and the property-check suites.

pub mod checks;
pub mod config;
pub mod grid;
pub mod output;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use grid::{run_grid, GridOutcome, GridSummary, SlopeRow, SummaryRow};
pub use output::write_outputs;
