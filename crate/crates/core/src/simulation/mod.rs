//! Monte Carlo studies of the PATE estimators under a one-covariate design.

mod dgp;
mod driver;
mod file;
mod params;

pub use dgp::{draw_trial_covariate, generate_dataset, generate_inner_trial, MIN_TRIAL};
pub use driver::{
    calibrate_sigma, run, run_double_layer, run_single_layer, CellSummary, EstimatorSummary, Layers,
    ReplicateCounts, SimulationConfig, SimulationReport,
};
pub use file::{NamedScenario, RunSection, ScenarioEntry, ScenarioFile};
pub use params::{
    delta_p_population, marginal_selection, pop_covariate_mean, solve_alpha0, solve_beta2,
    trial_covariate_mean, ScenarioParams, ScenarioTargets, ALPHA0_BRACKET, DEFAULT_SIGMA,
};
