//! Monte Carlo studies with a known marginal hazard ratio.

pub mod config;
pub mod generate;
pub mod run;

pub use config::{standard_grid, Confounding, ControlOutcome, PsSpec, ScenarioConfig};
pub use generate::{
    calibrate_censoring, censoring_fraction, generate_replicate, solve_time, true_propensity, Replicate,
};
pub use run::{run_replicates, run_scenario, write_metrics_csv, MetricsRow, MetricsTable, SimulationRun};
