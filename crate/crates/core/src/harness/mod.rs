//! Experiment runner over repeated random splits of the synthetic data,
//! the beta ablation, CSV reports and the built-in self-check.

mod config;
mod experiment;
mod report;
pub mod selfcheck;

pub use config::{
    parse_list, ExperimentConfig, MethodKind, WeightSource, DEFAULT_FRACTIONS, SCARCE_FRACTIONS,
};
pub use experiment::{ablate_beta, run_experiment, trial_data};
pub use report::{read_report, summarize, write_report, MethodSummary, ReportRow, REPORT_HEADER};
