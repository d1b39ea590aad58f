//! Experiment orchestration: transfer-risk estimation, bound-validity
//! trials, parameter sweeps, and the command line.

pub mod cli;
pub mod config;
pub mod experiment;

pub use cli::cli_main;
pub use config::{ExperimentConfig, FamilyConfig, LearnerConfig, LearnerKind};
pub use experiment::{
    apply_axis, bound_validity_experiment, estimate_transfer_risk, estimate_transfer_risk_with, quantize,
    read_results_csv, results_to_csv_string, sweep, test_accuracy, write_results_csv, ExperimentOutcome,
    ExperimentSummary, PerBound, ResultRow, SweepAxis, SweepRow, TransferRiskEstimate, TrialDetail, TrialFailure,
    RESULT_HEADER,
};
