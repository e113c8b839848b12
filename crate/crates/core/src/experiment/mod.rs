//! Config-driven runs, run directories and comparison tables.

pub mod checkpoint;
pub mod config;
pub mod records;
pub mod report;
pub mod runner;
pub mod sweep;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, ModelChoice, Strategy, TeacherAdaptation, OUTPUT_ENV};
pub use records::{read_metrics, MetricsLog, MetricsRecord};
pub use report::{report, report_csv, report_rows, ReportRow};
pub use runner::{run, run_in, CkaSummary, RunOutcome, RunSummary};
pub use sweep::{run_sweep, SweepAxis, SEEDS};
