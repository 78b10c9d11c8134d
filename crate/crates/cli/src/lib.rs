//! Command-line front end for the moral-hazard solvers: JSON configs in,
//! JSON and CSV artifacts out.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, CliError, Command, RunOptions};
pub use config::{parse_config, parse_config_str, ConfigError, ProblemSpec, Reservation};
