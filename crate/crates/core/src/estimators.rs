//! Point estimators of the population average treatment effect.
//!
//! Two families share one set of weights:
//!
//! * weighted-mean estimators (`IPW`, `SV_ONLY`): Hajek-weighted difference
//!   of trial arm means;
//! * linear-model estimators (`OLS`, `WOLS`, `MODSV`) fitted on the trial as
//!   `Y = η + X'β + Tγ + T X̃'λ + ε` and projected onto the population as
//!   `γ̂ + mean_pop(X̃)'λ̂`.
//!
//! The `_cor` variants differ from their base only by the outcome model:
//! treatment interactions present versus absent.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::CombinedSample;
use crate::error::{Arm, Error, Result};
use crate::numerics::{spd_inverse, spd_solve};
use crate::ps::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorId {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "OLS_cor")]
    OlsCor,
    #[serde(rename = "WOLS")]
    Wols,
    #[serde(rename = "WOLS_cor")]
    WolsCor,
    #[serde(rename = "MODSV")]
    Modsv,
    #[serde(rename = "MODSV_cor")]
    ModsvCor,
    #[serde(rename = "SV_ONLY")]
    SvOnly,
    #[serde(rename = "IPW")]
    Ipw,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 8] = [
        EstimatorId::Ols,
        EstimatorId::OlsCor,
        EstimatorId::Wols,
        EstimatorId::WolsCor,
        EstimatorId::Modsv,
        EstimatorId::ModsvCor,
        EstimatorId::SvOnly,
        EstimatorId::Ipw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Ols => "OLS",
            EstimatorId::OlsCor => "OLS_cor",
            EstimatorId::Wols => "WOLS",
            EstimatorId::WolsCor => "WOLS_cor",
            EstimatorId::Modsv => "MODSV",
            EstimatorId::ModsvCor => "MODSV_cor",
            EstimatorId::SvOnly => "SV_ONLY",
            EstimatorId::Ipw => "IPW",
        }
    }

    /// Outcome-model fit used, `None` for the weighted-mean estimators.
    pub fn fit_kind(self) -> Option<FitKind> {
        match self {
            EstimatorId::Ols | EstimatorId::OlsCor => Some(FitKind::Ols),
            EstimatorId::Wols | EstimatorId::WolsCor => Some(FitKind::Wols),
            EstimatorId::Modsv | EstimatorId::ModsvCor => Some(FitKind::Survey),
            EstimatorId::SvOnly | EstimatorId::Ipw => None,
        }
    }

    /// True for the variants fitted with treatment interactions.
    pub fn uses_interactions(self) -> bool {
        matches!(
            self,
            EstimatorId::OlsCor | EstimatorId::WolsCor | EstimatorId::ModsvCor
        )
    }

    pub fn is_model_based(self) -> bool {
        self.fit_kind().is_some()
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitKind {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "WOLS")]
    Wols,
    #[serde(rename = "SURVEY")]
    Survey,
}

impl FitKind {
    fn label(self) -> &'static str {
        match self {
            FitKind::Ols => "OLS",
            FitKind::Wols => "WOLS",
            FitKind::Survey => "SURVEY",
        }
    }
}

/// Main effects and treatment interactions, by covariate name. An empty
/// interaction list is the "no heterogeneity" model (λ̂ fixed at 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    pub main_effects: Vec<String>,
    pub interactions: Vec<String>,
}

impl OutcomeModelSpec {
    pub fn main_effects_only(sample: &CombinedSample) -> Self {
        OutcomeModelSpec {
            main_effects: sample.covariate_names().to_vec(),
            interactions: Vec::new(),
        }
    }

    pub fn fully_interacted(sample: &CombinedSample) -> Self {
        OutcomeModelSpec {
            main_effects: sample.covariate_names().to_vec(),
            interactions: sample.covariate_names().to_vec(),
        }
    }

    fn resolve(&self, sample: &CombinedSample) -> Result<ResolvedSpec> {
        let idx = |names: &[String]| {
            names
                .iter()
                .map(|n| sample.covariate_index(n))
                .collect::<Result<Vec<_>>>()
        };
        Ok(ResolvedSpec {
            main: idx(&self.main_effects)?,
            interactions: idx(&self.interactions)?,
        })
    }
}

/// The pair of outcome models used by the misspecified and `_cor` variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub misspecified: OutcomeModelSpec,
    pub correct: OutcomeModelSpec,
}

impl ModelSpecs {
    /// No interactions versus every covariate interacted with treatment.
    pub fn for_sample(sample: &CombinedSample) -> Self {
        ModelSpecs {
            misspecified: OutcomeModelSpec::main_effects_only(sample),
            correct: OutcomeModelSpec::fully_interacted(sample),
        }
    }

    pub fn spec_for(&self, id: EstimatorId) -> &OutcomeModelSpec {
        if id.uses_interactions() {
            &self.correct
        } else {
            &self.misspecified
        }
    }
}

#[derive(Debug, Clone)]
struct ResolvedSpec {
    main: Vec<usize>,
    interactions: Vec<usize>,
}

impl ResolvedSpec {
    fn n_coefs(&self) -> usize {
        2 + self.main.len() + self.interactions.len()
    }

    fn treatment_index(&self) -> usize {
        1 + self.main.len()
    }

    fn design_row(&self, x: &[f64], treated: bool, out: &mut [f64]) {
        let t = if treated { 1.0 } else { 0.0 };
        out[0] = 1.0;
        for (o, &j) in out[1..].iter_mut().zip(&self.main) {
            *o = x[j];
        }
        let ti = self.treatment_index();
        out[ti] = t;
        for (o, &j) in out[ti + 1..].iter_mut().zip(&self.interactions) {
            *o = t * x[j];
        }
    }
}

/// Coefficients ordered `(η, β..., γ, λ...)` with β and λ in spec order.
#[derive(Debug, Clone)]
pub struct ModelFitResult {
    pub coefs: DVector<f64>,
    pub cov_coefs: DMatrix<f64>,
    pub sigma2_hat: f64,
    pub fit_kind: FitKind,
    /// Index of γ̂ in `coefs`; λ̂ follows it.
    pub treatment_index: usize,
}

impl ModelFitResult {
    pub fn gamma(&self) -> f64 {
        self.coefs[self.treatment_index]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.coefs.as_slice()[self.treatment_index + 1..]
    }
}

/// Hajek-weighted difference of trial arm means.
pub fn ipw_estimate(sample: &CombinedSample, weights: &WeightVector) -> Result<f64> {
    // Sums run over all of Ω; population rows and the other arm add zeros.
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    let mut count = [0usize; 2];
    for (row, &w) in sample.rows().iter().zip(&weights.weights) {
        let (Some(t), Some(y)) = (row.treated, row.outcome) else {
            continue;
        };
        let a = t as usize;
        count[a] += 1;
        num[a] += w * y;
        den[a] += w;
    }
    let mu1 = arm_ratio(num[1], den[1], count[1], Arm::Treated)?;
    let mu0 = arm_ratio(num[0], den[0], count[0], Arm::Control)?;
    Ok(mu1 - mu0)
}

fn arm_ratio(num: f64, den: f64, count: usize, arm: Arm) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyArm(arm));
    }
    if !(den > 0.0) {
        return Err(Error::ZeroWeightArm(arm));
    }
    Ok(num / den)
}

/// Weighted domain mean of the outcome over one trial arm, treating the
/// weights as survey weights.
pub fn survey_domain_mean(sample: &CombinedSample, weights: &WeightVector, arm: Arm) -> Result<f64> {
    let (mut total, mut size, mut count) = (0.0, 0.0, 0usize);
    for (row, &w) in sample.rows().iter().zip(&weights.weights) {
        if row.arm() == Some(arm) {
            count += 1;
            total += w * row.outcome.unwrap_or(f64::NAN);
            size += w;
        }
    }
    arm_ratio(total, size, count, arm)
}

/// Difference of survey domain means; numerically identical to
/// [`ipw_estimate`].
pub fn survey_mean_estimate(sample: &CombinedSample, weights: &WeightVector) -> Result<f64> {
    let treated = survey_domain_mean(sample, weights, Arm::Treated)?;
    let control = survey_domain_mean(sample, weights, Arm::Control)?;
    Ok(treated - control)
}

struct Normal {
    /// `D'WD` (or `D'D`).
    xtwx: DMatrix<f64>,
    coefs: DVector<f64>,
    design: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    k: usize,
}

fn solve_normal(
    sample: &CombinedSample,
    spec: &ResolvedSpec,
    weights: Option<&WeightVector>,
) -> Result<Normal> {
    let k = spec.n_coefs();
    let mut design = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    let mut row_buf = vec![0.0; k];
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    for (i, row) in sample.rows().iter().enumerate() {
        let (Some(t), Some(yi)) = (row.treated, row.outcome) else {
            continue;
        };
        let wi = weights.map_or(1.0, |wv| wv.weights[i]);
        spec.design_row(&row.covariates, t, &mut row_buf);
        for a in 0..k {
            let wa = wi * row_buf[a];
            xtwy[a] += wa * yi;
            for b in a..k {
                xtwx[(a, b)] += wa * row_buf[b];
            }
        }
        design.extend_from_slice(&row_buf);
        y.push(yi);
        w.push(wi);
    }
    if y.len() < k {
        return Err(Error::RankDeficient("outcome design has fewer rows than coefficients"));
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let coefs = spd_solve(&xtwx, &xtwy).ok_or(Error::RankDeficient("outcome design"))?;
    Ok(Normal {
        xtwx,
        coefs,
        design,
        y,
        w,
        k,
    })
}

/// Fits the outcome model on the trial rows.
///
/// * `Ols`: unweighted, `cov = σ̂² (D'D)⁻¹`.
/// * `Wols`: weighted, `cov = σ̂²_w (D'WD)⁻¹` with `σ̂²_w = Σ w r² / (n - k)`.
/// * `Survey`: WOLS coefficients with the with-replacement linearization
///   covariance `(D'WD)⁻¹ [Σ w² r² d d'] (D'WD)⁻¹`.
pub fn fit_outcome_model(
    sample: &CombinedSample,
    spec: &OutcomeModelSpec,
    kind: FitKind,
    weights: Option<&WeightVector>,
) -> Result<ModelFitResult> {
    let resolved = spec.resolve(sample)?;
    let weights = match kind {
        FitKind::Ols => None,
        FitKind::Wols | FitKind::Survey => Some(weights.ok_or(Error::MissingWeights(kind.label()))?),
    };
    let ne = solve_normal(sample, &resolved, weights)?;
    let k = ne.k;
    let n = ne.y.len();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let d = &ne.design[i * k..(i + 1) * k];
            ne.y[i] - d.iter().zip(ne.coefs.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let dof = n.saturating_sub(k).max(1) as f64;
    let sigma2_hat = residuals
        .iter()
        .zip(&ne.w)
        .map(|(r, w)| w * r * r)
        .sum::<f64>()
        / dof;
    let bread = spd_inverse(&ne.xtwx).ok_or(Error::RankDeficient("outcome design"))?;
    let cov_coefs = match kind {
        FitKind::Ols | FitKind::Wols => &bread * sigma2_hat,
        FitKind::Survey => {
            let mut meat = DMatrix::<f64>::zeros(k, k);
            for i in 0..n {
                let d = &ne.design[i * k..(i + 1) * k];
                let c = (ne.w[i] * residuals[i]).powi(2);
                for a in 0..k {
                    for b in a..k {
                        meat[(a, b)] += c * d[a] * d[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    meat[(a, b)] = meat[(b, a)];
                }
            }
            let v = &bread * meat * &bread;
            (&v + v.transpose()) * 0.5
        }
    };
    Ok(ModelFitResult {
        coefs: ne.coefs,
        cov_coefs,
        sigma2_hat,
        fit_kind: kind,
        treatment_index: resolved.treatment_index(),
    })
}

/// Population mean of the interaction covariates of `spec`.
pub(crate) fn population_interaction_means(
    spec: &OutcomeModelSpec,
    sample: &CombinedSample,
) -> Result<Vec<f64>> {
    let means = sample.population_means()?;
    spec.interactions
        .iter()
        .map(|n| sample.covariate_index(n).map(|j| means[j]))
        .collect()
}

/// `γ̂ + mean_pop(X̃)'λ̂`.
pub fn pate_from_model(
    fit: &ModelFitResult,
    spec: &OutcomeModelSpec,
    sample: &CombinedSample,
) -> Result<f64> {
    let xbar = population_interaction_means(spec, sample)?;
    debug_assert_eq!(xbar.len(), fit.lambda().len());
    Ok(fit.gamma()
        + xbar
            .iter()
            .zip(fit.lambda())
            .map(|(x, l)| x * l)
            .sum::<f64>())
}

fn model_point(
    sample: &CombinedSample,
    spec: &OutcomeModelSpec,
    weights: Option<&WeightVector>,
) -> Result<f64> {
    let resolved = spec.resolve(sample)?;
    let ne = solve_normal(sample, &resolved, weights)?;
    let ti = resolved.treatment_index();
    let xbar = population_interaction_means(spec, sample)?;
    Ok(ne.coefs[ti]
        + xbar
            .iter()
            .zip(ne.coefs.iter().skip(ti + 1))
            .map(|(x, l)| x * l)
            .sum::<f64>())
}

/// Point estimate for one estimator given precomputed weights.
pub fn point_estimate(
    id: EstimatorId,
    sample: &CombinedSample,
    weights: &WeightVector,
    specs: &ModelSpecs,
) -> Result<f64> {
    match id.fit_kind() {
        None if id == EstimatorId::Ipw => ipw_estimate(sample, weights),
        None => survey_mean_estimate(sample, weights),
        Some(FitKind::Ols) => model_point(sample, specs.spec_for(id), None),
        Some(_) => model_point(sample, specs.spec_for(id), Some(weights)),
    }
}

/// Point estimates for several estimators, sharing fits where the point
/// values coincide (WOLS and MODSV; IPW and SV_ONLY).
pub fn point_estimates(
    ids: &[EstimatorId],
    sample: &CombinedSample,
    weights: &WeightVector,
    specs: &ModelSpecs,
) -> Vec<Result<f64>> {
    let mut cache: Vec<(u8, f64)> = Vec::new();
    let key = |id: EstimatorId| -> u8 {
        match id {
            EstimatorId::Ols => 0,
            EstimatorId::OlsCor => 1,
            EstimatorId::Wols | EstimatorId::Modsv => 2,
            EstimatorId::WolsCor | EstimatorId::ModsvCor => 3,
            EstimatorId::SvOnly => 4,
            EstimatorId::Ipw => 5,
        }
    };
    ids.iter()
        .map(|&id| {
            let k = key(id);
            if let Some(&(_, v)) = cache.iter().find(|(c, _)| *c == k) {
                return Ok(v);
            }
            let r = point_estimate(id, sample, weights, specs);
            if let Ok(v) = r {
                cache.push((k, v));
            }
            r
        })
        .collect()
}
