//! Generalizing randomized-trial treatment effects to a target population.
//!
//! A [`CombinedSample`] stacks trial subjects (treatment and outcome
//! recorded) with a sample from the target population (covariates only). A
//! logistic propensity model for trial membership yields odds weights that
//! reweight the trial to the population; eight point estimators and six
//! standard-error methods are built on top. The [`simulation`] module runs
//! single- and double-layer Monte Carlo studies of their behavior.

pub mod data;
pub mod error;
pub mod estimators;
pub mod numerics;
pub mod ps;
pub mod report;
pub mod rng;
pub mod simulation;
pub mod variance;

pub use data::{load_csv, read_csv, validate, write_csv, CombinedSample, CsvSchema, Diagnostic, SubjectRow};
pub use error::{Arm, Error, ErrorKind, Result};
pub use estimators::{EstimatorId, FitKind, ModelSpecs, OutcomeModelSpec};
pub use ps::{compute_weights, fit_ps_logistic, PsModelFit, PsOptions, WeightVector};
pub use variance::{BootstrapScheme, VarianceMethodId};
