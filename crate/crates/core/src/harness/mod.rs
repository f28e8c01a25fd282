//! Configuration, experiment dispatch and report emission.

pub mod config;
pub mod fit;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use fit::{fit_basis, fit_linear, fit_loglog, InlierRule, ScalingFit};
pub use report::{ExperimentReport, Gate, PlotSeries, ReportRow};
pub use run::{run, run_experiment, Experiment};
