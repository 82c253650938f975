//! Experiment harness for the `ebdevs` case studies: configuration
//! parsing, parallel realisation batches, CSV and JSON output, and SVG line
//! plots.

pub mod config;
pub mod error;
pub mod harness;
pub mod plot;

pub use config::{ExperimentConfig, RawConfig, Sweep};
pub use error::CliError;
pub use harness::{run_experiment, write_bundle, ResultBundle, RunRecord};
