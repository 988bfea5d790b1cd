//! Experiment orchestration for the arratia toolkit: config parsing, seeded
//! replica management, the rate and refinement studies, and stable CSV/JSON
//! result emission.

pub mod config;
pub mod error;
pub mod experiment;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat};
pub use error::{CliError, Result};
pub use experiment::{emit, run_experiment, LevelStat, ResultRecord, SlopeSummary};
