//! Command-line front end: configuration, parallel runners and file output
//! on top of `doubleq-core`.

pub mod commands;
pub mod config;
pub mod model;
pub mod output;

pub use commands::{analyze, report, simulate, verify, Refusal};
pub use config::ExperimentConfig;
