//! Experiment harness: JSON configs, runs with on-disk artifacts, selection
//! metrics against hidden tags, and run-to-run comparison.

pub mod compare;
pub mod config;
mod error;
pub mod metrics;
pub mod presets;
pub mod run;
pub mod selection;
pub mod tags;

pub use compare::{compare, CompareReport};
pub use config::{ExperimentConfig, Method};
pub use error::HarnessError;
pub use metrics::{MetricsRow, COLUMNS};
pub use run::{run, run_observed, RunOutcome};
pub use selection::{evaluate_selection, Prf, SelectionMetrics};

/// Environment variable that overrides the output directory of `run`.
pub const OUTPUT_DIR_ENV: &str = "JOSNC_OUTPUT_DIR";
