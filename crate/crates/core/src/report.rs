//! End-to-end estimation on a combined sample and the report files written
//! by the command-line tool.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{validate, CombinedSample, CsvSchema};
use crate::error::{Error, Result};
use crate::estimators::{point_estimate, EstimatorId, ModelSpecs};
use crate::ps::{compute_weights, fit_ps_logistic, overlap_delta_p, summarize_weights, PsOptions, WeightSummary};
use crate::rng;
use crate::simulation::{
    NamedScenario, RunSection, ScenarioEntry, ScenarioFile, SimulationConfig, SimulationReport,
};
use crate::variance::{analytic_se, bootstrap_many, confidence_interval, BootstrapConfig, VarianceMethodId};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What to estimate on a combined sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRequest {
    pub estimators: Vec<EstimatorId>,
    pub methods: Vec<VarianceMethodId>,
    pub bootstrap_reps: usize,
    /// Required when any bootstrap method is selected.
    pub seed: Option<u64>,
    pub level: f64,
    pub ps: PsOptions,
}

impl Default for EstimateRequest {
    fn default() -> Self {
        EstimateRequest {
            estimators: vec![EstimatorId::Ipw],
            methods: vec![VarianceMethodId::Mest],
            bootstrap_reps: 500,
            seed: None,
            level: 0.95,
            ps: PsOptions::default(),
        }
    }
}

impl EstimateRequest {
    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("confidence level must lie in (0,1)".into()));
        }
        let boot = self.methods.iter().any(|m| m.bootstrap_scheme().is_some());
        if boot && self.seed.is_none() {
            return Err(Error::Config("a seed is required for bootstrap methods".into()));
        }
        if boot && self.bootstrap_reps < 2 {
            return Err(Error::Config("bootstrap methods need at least 2 resamples".into()));
        }
        for &m in &self.methods {
            if !self.estimators.iter().any(|&e| m.applies_to(e)) {
                return Err(Error::NotApplicable {
                    estimator: self.estimators.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(","),
                    method: m.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeEntry {
    pub method: VarianceMethodId,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Why no standard error was produced.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorId,
    pub point: f64,
    pub entries: Vec<SeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMetadata {
    pub n: usize,
    pub n_trial: usize,
    pub n_population: usize,
    pub delta_p: f64,
    pub ps_coefficients: Vec<f64>,
    pub ps_iterations: usize,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRun {
    pub version: String,
    pub request: EstimateRequest,
    pub metadata: EstimateMetadata,
    pub weights: WeightSummary,
    pub reports: Vec<EstimateReport>,
}

/// Fits the propensity model once and reports every requested estimator
/// with a standard error and interval per applicable variance method.
/// Bootstrap method `m` resamples from the stream `(seed, BOOTSTRAP + m)`.
pub fn estimate(sample: &CombinedSample, request: &EstimateRequest) -> Result<EstimateRun> {
    request.validate()?;
    let diagnostics = validate(sample);
    if !diagnostics.is_empty() {
        let msg = diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
        return Err(Error::InvalidSample(msg));
    }
    let fit = fit_ps_logistic(sample, &request.ps)?;
    let weights = compute_weights(&fit, sample)?;
    let specs = ModelSpecs::for_sample(sample);

    let mut reports = Vec::with_capacity(request.estimators.len());
    for &e in &request.estimators {
        let point = point_estimate(e, sample, &weights, &specs)?;
        reports.push(EstimateReport { estimator: e, point, entries: Vec::new() });
    }
    let fill = |se: Result<f64>| -> SeEntry {
        SeEntry {
            method: VarianceMethodId::Mest,
            se: se.as_ref().ok().copied(),
            ci_low: None,
            ci_high: None,
            error: se.err().map(|e| e.to_string()),
        }
    };
    for &m in &request.methods {
        let ses: Vec<Option<Result<f64>>> = match m.bootstrap_scheme() {
            None => request
                .estimators
                .iter()
                .map(|&e| m.applies_to(e).then(|| analytic_se(e, m, sample, &fit, &weights, &specs)))
                .collect(),
            Some(scheme) => {
                let cfg = BootstrapConfig {
                    scheme,
                    reps: request.bootstrap_reps,
                    seed: rng::derive_seed(
                        request.seed.expect("validated"),
                        &[rng::tag::BOOTSTRAP + m as u64],
                    ),
                };
                bootstrap_many(sample, &request.estimators, &specs, &cfg, &request.ps)
                    .into_iter()
                    .map(|r| Some(r.map(|b| b.se)))
                    .collect()
            }
        };
        for (report, se) in reports.iter_mut().zip(ses) {
            let Some(se) = se else { continue };
            let mut entry = fill(se);
            entry.method = m;
            if let Some(s) = entry.se {
                let (lo, hi) = confidence_interval(report.point, s, request.level);
                entry.ci_low = Some(lo);
                entry.ci_high = Some(hi);
            }
            report.entries.push(entry);
        }
    }

    Ok(EstimateRun {
        version: VERSION.to_string(),
        request: request.clone(),
        metadata: EstimateMetadata {
            n: sample.len(),
            n_trial: sample.n_trial(),
            n_population: sample.n_population(),
            delta_p: overlap_delta_p(&weights, sample)?,
            ps_coefficients: fit.alpha.clone(),
            ps_iterations: fit.iterations,
            covariates: sample.covariate_names().to_vec(),
        },
        weights: summarize_weights(&weights, sample),
        reports,
    })
}

/// Input location recorded alongside an estimate so it can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateProvenance {
    pub data: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub kind: String,
    pub provenance: EstimateProvenance,
    #[serde(flatten)]
    pub run: EstimateRun,
}

/// A scenario file with every derived quantity pinned, so a rerun does not
/// depend on solver defaults.
pub fn pinned_scenario_file(config: &SimulationConfig, scenarios: &[NamedScenario]) -> ScenarioFile {
    ScenarioFile {
        run: RunSection {
            layers: Some(config.layers),
            reps: Some(config.reps),
            inner_reps: Some(config.inner_reps),
            seed: Some(config.seed),
            estimators: Some(config.estimators.clone()),
            variance: Some(config.methods.clone()),
            bootstrap_reps: Some(config.bootstrap_reps),
            bootstrap_subsample: config.bootstrap_subsample,
            level: Some(config.level),
            ps_max_iter: Some(config.ps.max_iter),
            ps_tol: Some(config.ps.tol),
        },
        defaults: ScenarioEntry::default(),
        scenario: scenarios
            .iter()
            .map(|s| ScenarioEntry {
                name: Some(s.name.clone()),
                alpha0: Some(s.params.alpha0),
                alpha1: Some(s.params.alpha1),
                target_p: None,
                beta0: Some(s.params.beta0),
                beta1: Some(s.params.beta1),
                beta2: Some(s.params.beta2),
                beta3: Some(s.params.beta3),
                true_pate: None,
                sigma: Some(s.params.sigma),
                n_total: Some(s.params.n_total),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub sampling_fraction: f64,
    #[serde(flatten)]
    pub report: SimulationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationDocument {
    pub kind: String,
    pub version: String,
    /// Rerunning this file reproduces `results` exactly.
    pub replay: ScenarioFile,
    pub results: Vec<NamedReport>,
}

/// Reads the replay block of a simulation JSON report.
pub fn replay_from_json(text: &str) -> Result<ScenarioFile> {
    #[derive(Deserialize)]
    struct Doc {
        replay: ScenarioFile,
    }
    serde_json::from_str::<Doc>(text)
        .map(|d| d.replay)
        .map_err(|e| Error::Config(format!("report JSON: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut buf, value).map_err(|e| Error::io(path, e.into()))?;
    buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    buf.flush().map_err(|e| Error::io(path, e))
}

/// One row per estimator × method with a standard error entry; estimators
/// without entries get a single row with an empty method.
pub fn estimate_csv_rows(run: &EstimateRun) -> Vec<Vec<String>> {
    let m = &run.metadata;
    let mut rows = Vec::new();
    for r in &run.reports {
        let base = |method: String, e: Option<&SeEntry>| {
            vec![
                r.estimator.to_string(),
                method,
                r.point.to_string(),
                fmt_opt(e.and_then(|e| e.se)),
                fmt_opt(e.and_then(|e| e.ci_low)),
                fmt_opt(e.and_then(|e| e.ci_high)),
                run.request.level.to_string(),
                m.n.to_string(),
                m.n_trial.to_string(),
                m.n_population.to_string(),
                m.delta_p.to_string(),
                e.and_then(|e| e.error.clone()).unwrap_or_default(),
            ]
        };
        if r.entries.is_empty() {
            rows.push(base(String::new(), None));
        }
        for e in &r.entries {
            rows.push(base(e.method.to_string(), Some(e)));
        }
    }
    rows
}

pub const ESTIMATE_HEADER: [&str; 12] = [
    "estimator", "method", "estimate", "se", "ci_low", "ci_high", "level", "n", "n_trial",
    "n_population", "delta_p", "error",
];

/// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
pub fn write_estimate(stem: &Path, doc: &EstimateDocument) -> Result<(PathBuf, PathBuf)> {
    let csv_path = stem.with_extension("csv");
    let json_path = stem.with_extension("json");
    write_rows(&csv_path, &ESTIMATE_HEADER, estimate_csv_rows(&doc.run))?;
    write_json(&json_path, doc)?;
    Ok((csv_path, json_path))
}

pub const RESULTS_HEADER: [&str; 22] = [
    "scenario", "layers", "alpha0", "alpha1", "beta2", "beta3", "sigma", "n_total",
    "sampling_fraction", "true_pate", "estimator", "method", "n", "bias", "mc_sd", "ave_se",
    "se_ratio", "finite_coverage", "infinite_coverage", "completed", "skipped", "mean_delta_p",
];

pub fn results_csv_rows(reports: &[NamedReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for nr in reports {
        let r = &nr.report;
        let p = &r.params;
        let layers = serde_json::to_value(r.config.layers)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let skipped = r.replicates.skipped_degenerate + r.replicates.skipped_numerical;
        for s in &r.estimators {
            let cells: Vec<_> = r.cells.iter().filter(|c| c.estimator == s.estimator).collect();
            let row = |method: String, n: usize, ave: f64, fc: f64, ic: f64| {
                vec![
                    nr.name.clone(),
                    layers.clone(),
                    p.alpha0.to_string(),
                    p.alpha1.to_string(),
                    p.beta2.to_string(),
                    p.beta3.to_string(),
                    p.sigma.to_string(),
                    p.n_total.to_string(),
                    nr.sampling_fraction.to_string(),
                    p.true_pate.to_string(),
                    s.estimator.to_string(),
                    method,
                    n.to_string(),
                    fmt_f(s.bias),
                    fmt_f(s.mc_sd),
                    fmt_f(ave),
                    fmt_f(ave / s.mc_sd),
                    fmt_f(fc),
                    fmt_f(ic),
                    r.replicates.completed.to_string(),
                    skipped.to_string(),
                    fmt_f(r.mean_delta_p),
                ]
            };
            if cells.is_empty() {
                rows.push(row(String::new(), s.n, f64::NAN, f64::NAN, f64::NAN));
            }
            for c in cells {
                rows.push(row(
                    c.method.to_string(),
                    c.n,
                    c.ave_se,
                    c.finite_coverage,
                    c.infinite_coverage,
                ));
            }
        }
    }
    rows
}

pub const FIGURE_HEADER: [&str; 9] = [
    "scenario", "alpha1", "beta3", "n_total", "sampling_fraction", "estimator", "method", "metric",
    "value",
];

/// Long format keyed by the plot axes: `bias` and `mc_sd` per estimator,
/// `ave_se`, `se_gap` (Ave SE minus MC SD) and both coverages per cell.
pub fn figure_csv_rows(reports: &[NamedReport]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for nr in reports {
        let r = &nr.report;
        let p = &r.params;
        let key = |e: EstimatorId, m: &str, metric: &str, v: f64| {
            vec![
                nr.name.clone(),
                p.alpha1.to_string(),
                p.beta3.to_string(),
                p.n_total.to_string(),
                nr.sampling_fraction.to_string(),
                e.to_string(),
                m.to_string(),
                metric.to_string(),
                fmt_f(v),
            ]
        };
        for s in &r.estimators {
            rows.push(key(s.estimator, "", "bias", s.bias));
            rows.push(key(s.estimator, "", "mc_sd", s.mc_sd));
        }
        for c in &r.cells {
            let mc = r.estimator(c.estimator).map_or(f64::NAN, |s| s.mc_sd);
            let m = c.method.as_str();
            rows.push(key(c.estimator, m, "ave_se", c.ave_se));
            rows.push(key(c.estimator, m, "se_gap", c.ave_se - mc));
            rows.push(key(c.estimator, m, "finite_coverage", c.finite_coverage));
            rows.push(key(c.estimator, m, "infinite_coverage", c.infinite_coverage));
        }
    }
    rows
}

/// Writes `<stem>.csv`, `<stem>_figure.csv` and `<stem>.json`.
pub fn write_simulation(stem: &Path, doc: &SimulationDocument) -> Result<Vec<PathBuf>> {
    let csv_path = stem.with_extension("csv");
    let fig_name = format!(
        "{}_figure.csv",
        stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    );
    let fig_path = stem.with_file_name(fig_name);
    let json_path = stem.with_extension("json");
    write_rows(&csv_path, &RESULTS_HEADER, results_csv_rows(&doc.results))?;
    write_rows(&fig_path, &FIGURE_HEADER, figure_csv_rows(&doc.results))?;
    write_json(&json_path, doc)?;
    Ok(vec![csv_path, fig_path, json_path])
}

/// Runs every scenario of a file with its run settings.
pub fn simulate_file(file: &ScenarioFile, config: &SimulationConfig) -> Result<SimulationDocument> {
    let scenarios = file.scenarios()?;
    let mut results = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let report = crate::simulation::run(&s.params, config)?;
        results.push(NamedReport {
            name: s.name.clone(),
            sampling_fraction: s.params.sampling_fraction(),
            report,
        });
    }
    Ok(SimulationDocument {
        kind: "simulation".into(),
        version: VERSION.to_string(),
        replay: pinned_scenario_file(config, &scenarios),
        results,
    })
}
