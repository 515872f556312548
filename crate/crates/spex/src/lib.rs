//! Experiment harness around `spex-core`: configuration files, baseline
//! versus speculative runs, reports and event-log replay.

pub mod config;
pub mod eventlog;
pub mod experiment;
pub mod report;

pub use config::{parse_flags, ConfigError, ExperimentConfig, SweepSpec};
pub use eventlog::{check_log, compute_critical_path_savings, read_log, replay, write_log, LogError, LogHeader};
pub use experiment::{run_experiment, run_pair, run_variant, sweep, ExperimentResult, Repetition, RunError, Stat, Summary};
pub use report::{emit_report, ReportError, ReportFormat, CSV_COLUMNS};
pub use spex_core;
