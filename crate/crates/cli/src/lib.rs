//! Experiment driver for `remd-core`: run configuration and the subcommands
//! behind the `remd` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;
