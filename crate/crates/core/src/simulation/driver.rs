//! Single- and double-layer Monte Carlo drivers and their performance
//! measures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_dataset, generate_inner_trial};
use super::params::ScenarioParams;
use crate::data::CombinedSample;
use crate::error::{Error, ErrorKind, Result};
use crate::estimators::{point_estimates, EstimatorId, ModelSpecs};
use crate::numerics::{mean, sample_sd};
use crate::ps::{compute_weights, fit_ps_logistic, overlap_delta_p, PsOptions};
use crate::rng::{self, tag};
use crate::variance::{analytic_se, bootstrap_many, confidence_interval, BootstrapConfig, VarianceMethodId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layers {
    /// Population and trial redrawn for every replicate.
    #[default]
    Single,
    /// Population fixed per outer replicate; trials redrawn in an inner loop.
    Double,
}

impl std::str::FromStr for Layers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Layers::Single),
            "double" => Ok(Layers::Double),
            _ => Err(Error::Config(format!("unknown layer design `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub layers: Layers,
    /// Datasets for a single-layer run; outer populations for a double-layer run.
    pub reps: usize,
    /// Trials per population; double layer only.
    pub inner_reps: usize,
    pub estimators: Vec<EstimatorId>,
    pub methods: Vec<VarianceMethodId>,
    pub bootstrap_reps: usize,
    /// Bootstrap columns are computed only on the first this-many (outer)
    /// replicates; all of them when absent.
    pub bootstrap_subsample: Option<usize>,
    pub level: f64,
    pub seed: u64,
    pub ps: PsOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            layers: Layers::Single,
            reps: 1000,
            inner_reps: 10,
            estimators: EstimatorId::ALL.to_vec(),
            methods: vec![
                VarianceMethodId::Mest,
                VarianceMethodId::SurveyLin,
                VarianceMethodId::Lincomb,
            ],
            bootstrap_reps: 500,
            bootstrap_subsample: None,
            level: 0.95,
            seed: 0,
            ps: PsOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self.layers {
            Layers::Single if self.reps < 2 => return bad("single-layer runs need reps >= 2"),
            Layers::Double if self.reps < 1 => return bad("double-layer runs need reps >= 1"),
            Layers::Double if self.inner_reps < 2 => return bad("double-layer runs need inner_reps >= 2"),
            _ => {}
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("confidence level must lie in (0,1)");
        }
        if self.methods.iter().any(|m| m.bootstrap_scheme().is_some()) && self.bootstrap_reps < 2 {
            return bad("bootstrap methods need bootstrap_reps >= 2");
        }
        Ok(())
    }

    /// `(estimator, method)` pairs reported, in output order.
    pub fn cells(&self) -> Vec<(EstimatorId, VarianceMethodId)> {
        self.estimators
            .iter()
            .flat_map(|&e| {
                self.methods
                    .iter()
                    .filter(move |m| m.applies_to(e))
                    .map(move |&m| (e, m))
            })
            .collect()
    }

    fn bootstrapped(&self, index: usize) -> bool {
        self.bootstrap_subsample.is_none_or(|k| index < k)
    }
}

/// Everything recorded from one analyzed dataset.
#[derive(Debug, Clone)]
struct Draw {
    finite_pate: f64,
    delta_p: f64,
    n_trial: usize,
    estimates: Vec<Option<f64>>,
    /// Indexed like [`SimulationConfig::cells`].
    ses: Vec<Option<f64>>,
}

fn analyze(
    sample: &CombinedSample,
    params: &ScenarioParams,
    config: &SimulationConfig,
    cells: &[(EstimatorId, VarianceMethodId)],
    boot_path: Option<&[u64]>,
) -> Result<Draw> {
    let fit = fit_ps_logistic(sample, &config.ps)?;
    let weights = compute_weights(&fit, sample)?;
    let specs = ModelSpecs::for_sample(sample);
    let estimates: Vec<Option<f64>> = point_estimates(&config.estimators, sample, &weights, &specs)
        .into_iter()
        .map(|r| r.ok().filter(|v| v.is_finite()))
        .collect();

    let mut ses: Vec<Option<f64>> = vec![None; cells.len()];
    for (slot, &(e, m)) in ses.iter_mut().zip(cells) {
        if m.bootstrap_scheme().is_none() {
            *slot = analytic_se(e, m, sample, &fit, &weights, &specs)
                .ok()
                .filter(|v| v.is_finite());
        }
    }
    if let Some(path) = boot_path {
        for &m in &config.methods {
            let Some(scheme) = m.bootstrap_scheme() else { continue };
            let mut seed_path = path.to_vec();
            seed_path.push(tag::BOOTSTRAP + m as u64);
            let boot = BootstrapConfig {
                scheme,
                reps: config.bootstrap_reps,
                seed: rng::derive_seed(config.seed, &seed_path),
            };
            let results = bootstrap_many(sample, &config.estimators, &specs, &boot, &config.ps);
            for (e, r) in config.estimators.iter().zip(results) {
                if let Some(k) = cells.iter().position(|&c| c == (*e, m)) {
                    ses[k] = r.ok().map(|b| b.se);
                }
            }
        }
    }

    let x_pop = sample.population_means()?[0];
    Ok(Draw {
        finite_pate: params.finite_pate(x_pop),
        delta_p: overlap_delta_p(&weights, sample)?,
        n_trial: sample.n_trial(),
        estimates,
        ses,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateCounts {
    pub requested: usize,
    pub completed: usize,
    /// Dropped because the trial was too small or the population empty.
    pub skipped_degenerate: usize,
    /// Dropped because the propensity model or weights failed.
    pub skipped_numerical: usize,
}

impl ReplicateCounts {
    fn record<T>(&mut self, r: &Result<T>) {
        self.requested += 1;
        match r {
            Ok(_) => self.completed += 1,
            Err(Error::DegenerateReplicate { .. }) => self.skipped_degenerate += 1,
            Err(e) if e.kind() == ErrorKind::Numerical => self.skipped_numerical += 1,
            Err(_) => self.skipped_degenerate += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorId,
    /// Replicates with a finite estimate.
    pub n: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mc_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub estimator: EstimatorId,
    pub method: VarianceMethodId,
    /// Replicates with both an estimate and a standard error.
    pub n: usize,
    pub ave_se: f64,
    pub finite_coverage: f64,
    pub infinite_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub params: ScenarioParams,
    pub config: SimulationConfig,
    /// Counted per analyzed dataset (outer × inner for a double-layer run).
    pub replicates: ReplicateCounts,
    /// Mean realized trial size over analyzed datasets.
    pub mean_n_trial: f64,
    /// Mean of the sample overlap diagnostic over analyzed datasets.
    pub mean_delta_p: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub cells: Vec<CellSummary>,
}

impl SimulationReport {
    pub fn estimator(&self, id: EstimatorId) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == id)
    }

    pub fn cell(&self, id: EstimatorId, method: VarianceMethodId) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.estimator == id && c.method == method)
    }
}

fn nan_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        mean(values)
    }
}

fn nan_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        f64::NAN
    } else {
        sample_sd(values)
    }
}

/// Cell summaries over a flat list of draws.
fn summarize_cells(
    draws: &[&Draw],
    params: &ScenarioParams,
    config: &SimulationConfig,
    cells: &[(EstimatorId, VarianceMethodId)],
) -> Vec<CellSummary> {
    cells
        .iter()
        .enumerate()
        .map(|(k, &(e, m))| {
            let j = config.estimators.iter().position(|&x| x == e).expect("cell estimator selected");
            let mut ses = Vec::new();
            let mut finite = 0usize;
            let mut infinite = 0usize;
            for d in draws {
                let (Some(est), Some(se)) = (d.estimates[j], d.ses[k]) else { continue };
                let (lo, hi) = confidence_interval(est, se, config.level);
                finite += usize::from(lo <= d.finite_pate && d.finite_pate <= hi);
                infinite += usize::from(lo <= params.true_pate && params.true_pate <= hi);
                ses.push(se);
            }
            let n = ses.len();
            let frac = |c: usize| if n == 0 { f64::NAN } else { c as f64 / n as f64 };
            CellSummary {
                estimator: e,
                method: m,
                n,
                ave_se: nan_mean(&ses),
                finite_coverage: frac(finite),
                infinite_coverage: frac(infinite),
            }
        })
        .collect()
}

fn draw_means(draws: &[&Draw]) -> (f64, f64) {
    let nt: Vec<f64> = draws.iter().map(|d| d.n_trial as f64).collect();
    let dp: Vec<f64> = draws.iter().map(|d| d.delta_p).collect();
    (nan_mean(&nt), nan_mean(&dp))
}

/// Every replicate draws a new population and trial from `params`.
/// Replicate `r` uses the stream `(seed, r, DATA)`.
pub fn run_single_layer(params: &ScenarioParams, config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let cells = config.cells();
    let results: Vec<Result<Draw>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(config.seed, &[r as u64, tag::DATA]);
            let sample = generate_dataset(params, &mut rng)?;
            let path = [r as u64];
            let boot = config.bootstrapped(r).then_some(&path[..]);
            analyze(&sample, params, config, &cells, boot)
        })
        .collect();

    let mut counts = ReplicateCounts::default();
    results.iter().for_each(|r| counts.record(r));
    let draws: Vec<&Draw> = results.iter().filter_map(|r| r.as_ref().ok()).collect();

    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let v: Vec<f64> = draws.iter().filter_map(|d| d.estimates[j]).collect();
            let m = nan_mean(&v);
            EstimatorSummary {
                estimator: e,
                n: v.len(),
                mean_estimate: m,
                bias: m - params.true_pate,
                mc_sd: nan_sd(&v),
            }
        })
        .collect();
    let (mean_n_trial, mean_delta_p) = draw_means(&draws);
    Ok(SimulationReport {
        params: params.clone(),
        config: config.clone(),
        replicates: counts,
        mean_n_trial,
        mean_delta_p,
        estimators,
        cells: summarize_cells(&draws, params, config, &cells),
    })
}

/// Each outer replicate fixes one population; its inner replicates redraw
/// the trial only. Outer `o` uses the stream `(seed, o, DATA)` and inner `i`
/// the stream `(seed, o, i, INNER)`.
pub fn run_double_layer(params: &ScenarioParams, config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let cells = config.cells();
    let outers: Vec<Vec<Result<Draw>>> = (0..config.reps)
        .into_par_iter()
        .map(|o| {
            let mut rng = rng::stream(config.seed, &[o as u64, tag::DATA]);
            let outer = match generate_dataset(params, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    let n_trial = match e {
                        Error::DegenerateReplicate { n_trial, .. } => n_trial,
                        _ => 0,
                    };
                    return (0..config.inner_reps)
                        .map(|_| {
                            Err(Error::DegenerateReplicate {
                                n_trial,
                                n_population: params.n_total - n_trial,
                            })
                        })
                        .collect();
                }
            };
            (0..config.inner_reps)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(config.seed, &[o as u64, i as u64, tag::INNER]);
                    let sample = generate_inner_trial(&outer, params, &mut rng)?;
                    let path = [o as u64, i as u64];
                    let boot = config.bootstrapped(o).then_some(&path[..]);
                    analyze(&sample, params, config, &cells, boot)
                })
                .collect()
        })
        .collect();

    let mut counts = ReplicateCounts::default();
    outers.iter().flatten().for_each(|r| counts.record(r));
    let groups: Vec<Vec<&Draw>> = outers
        .iter()
        .map(|g| g.iter().filter_map(|r| r.as_ref().ok()).collect())
        .collect();
    let draws: Vec<&Draw> = groups.iter().flatten().copied().collect();

    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let mut errors = Vec::new();
            let mut values = Vec::new();
            let mut inner_sds = Vec::new();
            for g in &groups {
                let v: Vec<f64> = g.iter().filter_map(|d| d.estimates[j]).collect();
                errors.extend(g.iter().filter_map(|d| d.estimates[j].map(|x| x - d.finite_pate)));
                if v.len() >= 2 {
                    inner_sds.push(sample_sd(&v));
                }
                values.extend(v);
            }
            EstimatorSummary {
                estimator: e,
                n: values.len(),
                mean_estimate: nan_mean(&values),
                bias: nan_mean(&errors),
                mc_sd: nan_mean(&inner_sds),
            }
        })
        .collect();
    let (mean_n_trial, mean_delta_p) = draw_means(&draws);
    Ok(SimulationReport {
        params: params.clone(),
        config: config.clone(),
        replicates: counts,
        mean_n_trial,
        mean_delta_p,
        estimators,
        cells: summarize_cells(&draws, params, config, &cells),
    })
}

pub fn run(params: &ScenarioParams, config: &SimulationConfig) -> Result<SimulationReport> {
    match config.layers {
        Layers::Single => run_single_layer(params, config),
        Layers::Double => run_double_layer(params, config),
    }
}

/// σ at which the single-layer MC SD of the IPW estimator equals `target_sd`.
///
/// Weights do not depend on outcomes, so on common random numbers every IPW
/// estimate is `a_r + σ b_r` and its sample variance is a quadratic in σ;
/// two runs (σ = 0 and σ = 1) determine it exactly.
pub fn calibrate_sigma(
    params: &ScenarioParams,
    reps: usize,
    seed: u64,
    target_sd: f64,
    ps: &PsOptions,
) -> Result<f64> {
    let estimates = |sigma: f64| -> Vec<Option<f64>> {
        let p = params.with_sigma(sigma);
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng::stream(seed, &[r as u64, tag::DATA]);
                let sample = generate_dataset(&p, &mut rng).ok()?;
                let fit = fit_ps_logistic(&sample, ps).ok()?;
                let w = compute_weights(&fit, &sample).ok()?;
                crate::estimators::ipw_estimate(&sample, &w).ok()
            })
            .collect()
    };
    let (a_all, ab_all) = (estimates(0.0), estimates(1.0));
    let (a, b): (Vec<f64>, Vec<f64>) = a_all
        .iter()
        .zip(&ab_all)
        .filter_map(|(x, y)| Some((((*x)?), (*y)? - (*x)?)))
        .unzip();
    if a.len() < 2 {
        return Err(Error::Config("too few usable calibration replicates".into()));
    }
    let (ma, mb) = (mean(&a), mean(&b));
    let m = (a.len() - 1) as f64;
    let var_a = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / m;
    let var_b = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / m;
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / m;
    // var_b σ² + 2 cov σ + var_a - target² = 0
    let c = var_a - target_sd * target_sd;
    let disc = cov * cov - var_b * c;
    if var_b <= 0.0 || disc < 0.0 {
        return Err(Error::Config(format!("target MC SD {target_sd} is not attainable")));
    }
    let sigma = (-cov + disc.sqrt()) / var_b;
    if sigma < 0.0 {
        return Err(Error::Config(format!("target MC SD {target_sd} is below the σ = 0 floor")));
    }
    Ok(sigma)
}
