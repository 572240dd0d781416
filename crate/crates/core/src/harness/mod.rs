//! Experiment harness: configuration, results files, checkpoints and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod output;

pub use config::{DatasetSpec, ExperimentConfig, PartitionSpec};
pub use output::{CsvRow, CsvSink, RunSummary};
