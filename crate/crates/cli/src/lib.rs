//! Command-line pipeline for active-set DC-OPF: configuration, stage orchestration, CSV
//! reports and timing benchmarks.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use error::{CliError, CliResult, Stage};
