//! Standard errors for the PATE estimators.
//!
//! | method       | applies to            | weights treated as |
//! |--------------|-----------------------|--------------------|
//! | `MEST`       | IPW, SV_ONLY          | estimated          |
//! | `SURVEY_LIN` | IPW, SV_ONLY          | fixed              |
//! | `LINCOMB`    | model-based           | fixed              |
//! | `RB`         | all                   | re-estimated       |
//! | `WSB`        | all                   | re-estimated       |
//! | `WAWSB`      | all                   | re-estimated       |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CombinedSample, SubjectRow};
use crate::error::{Arm, Error, Result};
use crate::estimators::{
    fit_outcome_model, population_interaction_means, point_estimates, EstimatorId, ModelFitResult, ModelSpecs,
    OutcomeModelSpec,
};
use crate::numerics::{normal_quantile, sample_sd, spd_inverse};
use crate::ps::{compute_weights, fit_ps_logistic, PsModelFit, PsOptions, WeightVector, PS_EPS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarianceMethodId {
    #[serde(rename = "MEST")]
    Mest,
    #[serde(rename = "SURVEY_LIN")]
    SurveyLin,
    #[serde(rename = "LINCOMB")]
    Lincomb,
    #[serde(rename = "RB")]
    Rb,
    #[serde(rename = "WSB")]
    Wsb,
    #[serde(rename = "WAWSB")]
    Wawsb,
}

impl VarianceMethodId {
    pub const ALL: [VarianceMethodId; 6] = [
        VarianceMethodId::Mest,
        VarianceMethodId::SurveyLin,
        VarianceMethodId::Lincomb,
        VarianceMethodId::Rb,
        VarianceMethodId::Wsb,
        VarianceMethodId::Wawsb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMethodId::Mest => "MEST",
            VarianceMethodId::SurveyLin => "SURVEY_LIN",
            VarianceMethodId::Lincomb => "LINCOMB",
            VarianceMethodId::Rb => "RB",
            VarianceMethodId::Wsb => "WSB",
            VarianceMethodId::Wawsb => "WAWSB",
        }
    }

    pub fn applies_to(self, estimator: EstimatorId) -> bool {
        match self {
            VarianceMethodId::Mest | VarianceMethodId::SurveyLin => !estimator.is_model_based(),
            VarianceMethodId::Lincomb => estimator.is_model_based(),
            VarianceMethodId::Rb | VarianceMethodId::Wsb | VarianceMethodId::Wawsb => true,
        }
    }

    pub fn bootstrap_scheme(self) -> Option<BootstrapScheme> {
        match self {
            VarianceMethodId::Rb => Some(BootstrapScheme::Rb),
            VarianceMethodId::Wsb => Some(BootstrapScheme::Wsb),
            VarianceMethodId::Wawsb => Some(BootstrapScheme::Wawsb),
            _ => None,
        }
    }

    pub fn check_applicable(self, estimator: EstimatorId) -> Result<()> {
        if self.applies_to(estimator) {
            Ok(())
        } else {
            Err(Error::NotApplicable {
                estimator: estimator.to_string(),
                method: self.to_string(),
            })
        }
    }
}

impl fmt::Display for VarianceMethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceMethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VarianceMethodId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variance method `{s}`")))
    }
}

/// Standard error of the IPW estimator from the stacked estimating
/// equations of the propensity score and the two Hajek means.
///
/// Each subject's influence value is
///
/// ```text
/// I_i = T S q (Y - μ1) / a1 - (1-T) S q (Y - μ0) / a0 - (b1 - b0)' X_i (S_i - e_i)
/// ```
///
/// with `q = (1-e)/e`, `a_t` the sample mean of the arm's `S q`, `b_t =
/// M⁻¹ mean(arm S q (Y - μ_t) X) / a_t` and `M = mean(e(1-e) X X')`, where
/// `X_i` is the propensity design row `[1, x_i]`. Returns `sqrt(Σ I_i²) / n`.
pub fn mest_variance(
    sample: &CombinedSample,
    fit: &PsModelFit,
    weights: &WeightVector,
) -> Result<f64> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let n = sample.len();
    let nf = n as f64;
    let k = sample.n_covariates() + 1;
    if let Some((row, &value)) = weights
        .ps
        .iter()
        .enumerate()
        .find(|(_, &e)| !(e > PS_EPS && e < 1.0 - PS_EPS))
    {
        return Err(Error::DegeneratePs { row, value });
    }
    let design = |r: &SubjectRow| {
        let mut d = DVector::<f64>::zeros(k);
        d[0] = 1.0;
        for (j, x) in r.covariates.iter().enumerate() {
            d[j + 1] = *x;
        }
        d
    };

    // arm sums of q and q*y
    let mut sq = [0.0; 2];
    let mut sqy = [0.0; 2];
    let mut count = [0usize; 2];
    for (r, &e) in sample.rows().iter().zip(&weights.ps) {
        if let (Some(t), Some(y)) = (r.treated, r.outcome) {
            let q = (1.0 - e) / e;
            let a = t as usize;
            sq[a] += q;
            sqy[a] += q * y;
            count[a] += 1;
        }
    }
    for (a, arm) in [(1, Arm::Treated), (0, Arm::Control)] {
        if count[a] == 0 {
            return Err(Error::EmptyArm(arm));
        }
    }
    let mu = [sqy[0] / sq[0], sqy[1] / sq[1]];
    let a_mean = [sq[0] / nf, sq[1] / nf];

    let mut h = [DVector::<f64>::zeros(k), DVector::<f64>::zeros(k)];
    let mut info = DMatrix::<f64>::zeros(k, k);
    for (r, &e) in sample.rows().iter().zip(&weights.ps) {
        let d = design(r);
        info.ger(e * (1.0 - e), &d, &d, 1.0);
        if let (Some(t), Some(y)) = (r.treated, r.outcome) {
            let a = t as usize;
            h[a].axpy((1.0 - e) / e * (y - mu[a]), &d, 1.0);
        }
    }
    info /= nf;
    let info_inv = spd_inverse(&info).ok_or(Error::SingularInformation)?;
    let b1 = &info_inv * &h[1] / (nf * a_mean[1]);
    let b0 = &info_inv * &h[0] / (nf * a_mean[0]);
    let b = b1 - b0;

    let mut ss = 0.0;
    for (r, &e) in sample.rows().iter().zip(&weights.ps) {
        let d = design(r);
        let s = if r.in_trial { 1.0 } else { 0.0 };
        let mut infl = -b.dot(&d) * (s - e);
        if let (Some(t), Some(y)) = (r.treated, r.outcome) {
            let a = t as usize;
            let term = (1.0 - e) / e * (y - mu[a]) / a_mean[a];
            infl += if t { term } else { -term };
        }
        ss += infl * infl;
    }
    Ok(ss.sqrt() / nf)
}

/// Design-based standard error of the difference of survey domain means,
/// weights held fixed:
/// `v_a = Σ_a w²(y - μ̂_a)² · n_a/(n_a - 1) / (Σ_a w)²`, `se = sqrt(v_1 + v_0)`.
pub fn survey_mean_variance(sample: &CombinedSample, weights: &WeightVector) -> Result<f64> {
    let mut total = 0.0;
    for arm in [Arm::Treated, Arm::Control] {
        let members: Vec<(f64, f64)> = sample
            .rows()
            .iter()
            .zip(&weights.weights)
            .filter(|(r, _)| r.arm() == Some(arm))
            .map(|(r, &w)| (w, r.outcome.unwrap_or(f64::NAN)))
            .collect();
        let na = members.len();
        if na == 0 {
            return Err(Error::EmptyArm(arm));
        }
        if na == 1 {
            return Err(Error::ArmTooSmall(arm));
        }
        let sw: f64 = members.iter().map(|(w, _)| w).sum();
        if !(sw > 0.0) {
            return Err(Error::ZeroWeightArm(arm));
        }
        let mu = members.iter().map(|(w, y)| w * y).sum::<f64>() / sw;
        let ss: f64 = members
            .iter()
            .map(|(w, y)| (w * (y - mu)).powi(2))
            .sum();
        total += ss * (na as f64 / (na as f64 - 1.0)) / (sw * sw);
    }
    Ok(total.sqrt())
}

/// `sqrt(c' V c)` with `c = [1, mean_pop(X̃)]` and `V` the covariance of
/// `(γ̂, λ̂)`; covariates are held fixed.
pub fn lincomb_variance(
    fit: &ModelFitResult,
    spec: &OutcomeModelSpec,
    sample: &CombinedSample,
) -> Result<f64> {
    let xbar = population_interaction_means(spec, sample)?;
    let ti = fit.treatment_index;
    let mut c = DVector::<f64>::zeros(1 + xbar.len());
    c[0] = 1.0;
    for (j, x) in xbar.iter().enumerate() {
        c[j + 1] = *x;
    }
    let m = c.len();
    if ti + m > fit.cov_coefs.nrows() {
        return Err(Error::Config("model fit does not match the outcome spec".into()));
    }
    let v = fit.cov_coefs.view((ti, ti), (m, m));
    let var = c.dot(&(v * &c));
    Ok(var.max(0.0).sqrt())
}

/// Closed-form standard error for one estimator under `MEST`, `SURVEY_LIN`
/// or `LINCOMB`.
pub fn analytic_se(
    estimator: EstimatorId,
    method: VarianceMethodId,
    sample: &CombinedSample,
    fit: &PsModelFit,
    weights: &WeightVector,
    specs: &ModelSpecs,
) -> Result<f64> {
    method.check_applicable(estimator)?;
    match method {
        VarianceMethodId::Mest => mest_variance(sample, fit, weights),
        VarianceMethodId::SurveyLin => survey_mean_variance(sample, weights),
        VarianceMethodId::Lincomb => {
            let kind = estimator.fit_kind().expect("LINCOMB applies to model-based estimators");
            let spec = specs.spec_for(estimator);
            let model = fit_outcome_model(sample, spec, kind, Some(weights))?;
            lincomb_variance(&model, spec, sample)
        }
        VarianceMethodId::Rb | VarianceMethodId::Wsb | VarianceMethodId::Wawsb => Err(Error::Config(
            format!("{method} is a bootstrap method and has no closed form"),
        )),
    }
}

/// Symmetric normal-quantile interval `point ± z_{(1+level)/2} se`.
pub fn confidence_interval(point: f64, se: f64, level: f64) -> (f64, f64) {
    debug_assert!(level > 0.0 && level < 1.0 && se >= 0.0);
    let z = normal_quantile(0.5 * (1.0 + level));
    (point - z * se, point + z * se)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BootstrapScheme {
    /// Draw `n` subjects from the combined sample.
    #[serde(rename = "RB")]
    Rb,
    /// Draw trial and population subjects separately; `n_trial` fixed.
    #[serde(rename = "WSB")]
    Wsb,
    /// Draw within each trial arm; population rows fixed.
    #[serde(rename = "WAWSB")]
    Wawsb,
}

impl BootstrapScheme {
    pub fn method(self) -> VarianceMethodId {
        match self {
            BootstrapScheme::Rb => VarianceMethodId::Rb,
            BootstrapScheme::Wsb => VarianceMethodId::Wsb,
            BootstrapScheme::Wawsb => VarianceMethodId::Wawsb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub scheme: BootstrapScheme,
    pub reps: usize,
    pub seed: u64,
}

/// Maximum fraction of failed resamples before the bootstrap is rejected.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

/// One bootstrap resample. Row positions are kept: every output row at
/// position `i` is drawn from the same stratum as input row `i` (for RB the
/// stratum is the whole sample).
pub fn resample<R: Rng + ?Sized>(
    sample: &CombinedSample,
    scheme: BootstrapScheme,
    rng: &mut R,
) -> CombinedSample {
    let rows = sample.rows();
    let n = rows.len();
    let out: Vec<SubjectRow> = match scheme {
        BootstrapScheme::Rb => (0..n).map(|_| rows[rng.random_range(0..n)].clone()).collect(),
        BootstrapScheme::Wsb | BootstrapScheme::Wawsb => {
            let mut pools: [Vec<usize>; 3] = Default::default();
            let stratum = |r: &SubjectRow| -> usize {
                match (scheme, r.arm()) {
                    (_, None) => 0,
                    (BootstrapScheme::Wsb, Some(_)) => 1,
                    (_, Some(Arm::Treated)) => 1,
                    (_, Some(Arm::Control)) => 2,
                }
            };
            for (i, r) in rows.iter().enumerate() {
                pools[stratum(r)].push(i);
            }
            rows.iter()
                .map(|r| {
                    let s = stratum(r);
                    if s == 0 && scheme == BootstrapScheme::Wawsb {
                        return r.clone();
                    }
                    let pool = &pools[s];
                    rows[pool[rng.random_range(0..pool.len())]].clone()
                })
                .collect()
        }
    };
    CombinedSample::from_checked_rows(out, sample.covariate_names().to_vec())
}

/// Bootstrap result for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub se: f64,
    pub used: usize,
    pub failed: usize,
}

/// Runs the full pipeline (propensity refit, weights, estimator) on each
/// resample and returns one standard error per requested estimator.
///
/// Resample `b` draws from the stream `(config.seed, b)`, so results do not
/// depend on the number of worker threads.
pub fn bootstrap_many(
    sample: &CombinedSample,
    estimators: &[EstimatorId],
    specs: &ModelSpecs,
    config: &BootstrapConfig,
    ps_opts: &PsOptions,
) -> Vec<Result<BootstrapSe>> {
    let draws: Vec<Vec<Option<f64>>> = (0..config.reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(config.seed, &[b as u64]);
            let boot = resample(sample, config.scheme, &mut rng);
            let weights = fit_ps_logistic(&boot, ps_opts).and_then(|f| compute_weights(&f, &boot));
            match weights {
                Ok(w) => point_estimates(estimators, &boot, &w, specs)
                    .into_iter()
                    .map(|r| r.ok().filter(|v| v.is_finite()))
                    .collect(),
                Err(_) => vec![None; estimators.len()],
            }
        })
        .collect();
    (0..estimators.len())
        .map(|j| {
            let values: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
            let failed = config.reps - values.len();
            if failed as f64 > MAX_FAILED_FRACTION * config.reps as f64 || values.len() < 2 {
                return Err(Error::TooManyFailedResamples {
                    failed,
                    total: config.reps,
                });
            }
            Ok(BootstrapSe {
                se: sample_sd(&values),
                used: values.len(),
                failed,
            })
        })
        .collect()
}

/// Bootstrap standard error of a single estimator.
pub fn bootstrap_variance(
    sample: &CombinedSample,
    estimator: EstimatorId,
    specs: &ModelSpecs,
    config: &BootstrapConfig,
    ps_opts: &PsOptions,
) -> Result<f64> {
    if config.reps < 2 {
        return Err(Error::Config("bootstrap needs at least 2 resamples".into()));
    }
    bootstrap_many(sample, &[estimator], specs, config, ps_opts)
        .pop()
        .expect("one estimator requested")
        .map(|b| b.se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ps::weights_from_scores;
    use approx::assert_abs_diff_eq;

    #[test]
    fn survey_variance_hand_arithmetic() {
        // treated arm (w, y) = (1, 2), (3, 4); control arm with zero spread
        let s = CombinedSample::new(
            vec![
                SubjectRow::trial(true, 2.0, &[0.0]),
                SubjectRow::trial(true, 4.0, &[0.0]),
                SubjectRow::trial(false, 1.0, &[0.0]),
                SubjectRow::trial(false, 1.0, &[0.0]),
                SubjectRow::population(&[0.0]),
            ],
            vec!["x".into()],
        )
        .unwrap();
        let w = WeightVector {
            weights: vec![1.0, 3.0, 1.0, 1.0, 0.0],
            ps: vec![0.5; 5],
        };
        let se = survey_mean_variance(&s, &w).unwrap();
        assert_eq!(se * se, 0.5625);
    }

    #[test]
    fn survey_variance_equal_weights_is_two_sample() {
        let ys1 = [1.0, 2.5, 4.0, 3.0];
        let ys0 = [0.0, 1.0, 0.5];
        let mut rows: Vec<SubjectRow> = ys1.iter().map(|&y| SubjectRow::trial(true, y, &[0.0])).collect();
        rows.extend(ys0.iter().map(|&y| SubjectRow::trial(false, y, &[0.0])));
        rows.push(SubjectRow::population(&[0.0]));
        let s = CombinedSample::new(rows, vec!["x".into()]).unwrap();
        let w = WeightVector {
            weights: vec![2.0; 7].into_iter().chain([0.0]).collect(),
            ps: vec![0.5; 8],
        };
        let var = |ys: &[f64]| sample_sd(ys).powi(2) / ys.len() as f64;
        let expect = (var(&ys1) + var(&ys0)).sqrt();
        assert_abs_diff_eq!(survey_mean_variance(&s, &w).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn survey_variance_arm_of_one() {
        let s = CombinedSample::new(
            vec![
                SubjectRow::trial(true, 2.0, &[0.0]),
                SubjectRow::trial(false, 1.0, &[0.0]),
                SubjectRow::trial(false, 3.0, &[0.0]),
            ],
            vec!["x".into()],
        )
        .unwrap();
        let w = WeightVector {
            weights: vec![1.0; 3],
            ps: vec![0.5; 3],
        };
        assert!(matches!(
            survey_mean_variance(&s, &w),
            Err(Error::ArmTooSmall(Arm::Treated))
        ));
    }

    #[test]
    fn ci_cases() {
        assert_eq!(confidence_interval(1.3, 0.0, 0.95), (1.3, 1.3));
        let (lo, hi) = confidence_interval(0.188, 0.807, 0.95);
        assert_eq!((round2(lo), round2(hi)), (-1.39, 1.77));
        let (lo, hi) = confidence_interval(0.188, 0.756, 0.95);
        assert_eq!((round2(lo), round2(hi)), (-1.29, 1.67));
    }

    fn round2(x: f64) -> f64 {
        (x * 100.0).round() / 100.0
    }

    #[test]
    fn applicability_matrix() {
        use EstimatorId::*;
        use VarianceMethodId::*;
        assert!(Mest.applies_to(Ipw) && Mest.applies_to(SvOnly) && !Mest.applies_to(Wols));
        assert!(SurveyLin.applies_to(SvOnly) && !SurveyLin.applies_to(ModsvCor));
        assert!(Lincomb.applies_to(Ols) && !Lincomb.applies_to(Ipw));
        for e in EstimatorId::ALL {
            assert!(Rb.applies_to(e) && Wsb.applies_to(e) && Wawsb.applies_to(e));
        }
        assert!(Lincomb.check_applicable(Ipw).is_err());
    }

    fn constant_within_arms() -> CombinedSample {
        let mut rows = Vec::new();
        for i in 0..30 {
            let x = (i as f64 * 0.173).fract();
            if i % 3 == 0 {
                rows.push(SubjectRow::trial(i % 2 == 0, if i % 2 == 0 { 5.0 } else { 2.0 }, &[x]));
            } else {
                rows.push(SubjectRow::population(&[x]));
            }
        }
        CombinedSample::new(rows, vec!["x".into()]).unwrap()
    }

    #[test]
    fn mest_zero_for_constant_outcomes() {
        let s = constant_within_arms();
        let fit = fit_ps_logistic(&s, &PsOptions::default()).unwrap();
        let w = compute_weights(&fit, &s).unwrap();
        assert_abs_diff_eq!(mest_variance(&s, &fit, &w).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_degenerate_is_zero() {
        // x constant gives a constant propensity score in every resample
        let mut rows = Vec::new();
        for i in 0..40 {
            if i % 4 == 0 {
                rows.push(SubjectRow::trial(i % 8 == 0, if i % 8 == 0 { 3.0 } else { 1.0 }, &[]));
            } else {
                rows.push(SubjectRow::population(&[]));
            }
        }
        let s = CombinedSample::new(rows, vec![]).unwrap();
        let specs = ModelSpecs::for_sample(&s);
        for scheme in [BootstrapScheme::Wsb, BootstrapScheme::Wawsb] {
            let cfg = BootstrapConfig { scheme, reps: 50, seed: 3 };
            let se = bootstrap_variance(&s, EstimatorId::Ipw, &specs, &cfg, &PsOptions::default()).unwrap();
            assert!(se < 1e-12, "{se}");
        }
    }

    #[test]
    fn wawsb_keeps_population_and_arms() {
        let s = constant_within_arms();
        let mut r = rng::stream(11, &[0]);
        for _ in 0..20 {
            let b = resample(&s, BootstrapScheme::Wawsb, &mut r);
            assert_eq!(b.arm_size(Arm::Treated), s.arm_size(Arm::Treated));
            assert_eq!(b.arm_size(Arm::Control), s.arm_size(Arm::Control));
            for (orig, new) in s.rows().iter().zip(b.rows()) {
                if !orig.in_trial {
                    assert_eq!(orig, new);
                }
            }
        }
    }

    #[test]
    fn weights_from_fixed_scores_feed_mest() {
        let s = constant_within_arms();
        let fit = fit_ps_logistic(&s, &PsOptions::default()).unwrap();
        let w = compute_weights(&fit, &s).unwrap();
        let w2 = weights_from_scores(w.ps.clone(), &s).unwrap();
        assert_eq!(w, w2);
    }
}
