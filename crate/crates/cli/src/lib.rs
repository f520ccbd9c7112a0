//! Command-line harness for the `enprune` library: toy data, model files,
//! run configuration and the experiment drivers behind each subcommand.

pub mod arch;
pub mod commands;
pub mod config;
pub mod fsutil;
pub mod model;
pub mod toy;
