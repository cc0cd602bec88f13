//! Experiment orchestration: configs, end-to-end runs, ablations and reports.

pub mod ablate;
pub mod config;
pub mod experiment;
pub mod report;

pub use ablate::{ablate_gates, ablate_gates_csv, ablate_pilots, ablate_pilots_csv, GateCurvePoint, PilotCurvePoint};
pub use config::{ExperimentConfig, ExperimentInputs, ExperimentSettings, DEFAULT_SEED};
pub use experiment::{run_experiment, Experiment, ExperimentOutput, RowKind, RowResult, SelectionMatrix};
pub use report::{write_outputs, Provenance};
