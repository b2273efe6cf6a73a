//! Experiment harness: configuration, single runs and comparison grids.

pub mod config;
pub mod grid;
pub mod run;

pub use config::{parse_config, parse_config_str, DataSource, InitKind, RunConfig};
pub use grid::{compare_grid, CachedRunner, DirectRunner, GridOptions, GridSummary, Runner};
pub use run::{execute, run, RunReport};
