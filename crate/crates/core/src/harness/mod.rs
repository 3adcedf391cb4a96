//! Experiment configuration, execution, fitting and reporting.

pub mod config;
pub mod experiment;
pub mod fit;
pub mod presets;

pub use config::{Check, CouplingConfig, ExperimentConfig};
pub use experiment::{run_experiment, write_outputs, ExperimentOutcome};
pub use fit::{fit_rate, fit_rate_resolved, scaling_slope, RateFit, ScalingReport};
