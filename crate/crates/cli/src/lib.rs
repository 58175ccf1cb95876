//! Configuration-driven experiment runner for the `liebflux` simulator.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{parse_config, ConfigError, Experiment, RunConfig};
pub use run::{plot_file, run, RunError, RunOptions, RunReport};
