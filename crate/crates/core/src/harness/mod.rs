//! Experiment orchestration, metrics and reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::{ControllerSpec, ExperimentConfig, ModelSpec, ANC_OFF};
pub use experiment::{run_trials, ResolvedController, TrialOutcome};
pub use metrics::{anc_gain_db, average_traces, convergence_time, steady_state, Decibels};
pub use pipeline::run_pipeline;
pub use report::{ControllerReport, MetricsReport, TrialMetrics};
