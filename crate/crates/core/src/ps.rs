//! Trial-membership propensity model and generalization weights.
//!
//! The propensity score here is `P(S = 1 | X)`, the probability of being in
//! the trial, fitted by logistic regression on `[1, X]` over the combined
//! sample. Trial subjects get weight `(1 - e) / e * p / (1 - p)` with
//! `p = n_trial / n`; population subjects get weight zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CombinedSample, SubjectRow};
use crate::error::{Error, Result};
use crate::numerics::{logistic, logit, spd_inverse, spd_solve};

/// Coefficients at or beyond this magnitude are treated as separation.
pub const SEPARATION_BOUND: f64 = 50.0;
/// Fitted scores within this distance of 0 or 1 are rejected.
pub const PS_EPS: f64 = 1e-12;
/// Share of total weight carried by one subject that triggers a warning.
pub const MAX_WEIGHT_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsOptions {
    pub max_iter: usize,
    /// Bound on the Euclidean norm of the mean score `(1/n) Σ (s - e) [1, x]`.
    pub tol: f64,
}

impl Default for PsOptions {
    fn default() -> Self {
        PsOptions {
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsModelFit {
    /// Intercept first.
    pub alpha: Vec<f64>,
    /// Inverse observed information at `alpha`.
    pub cov_alpha: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl PsModelFit {
    #[inline]
    pub fn linear_predictor(&self, covariates: &[f64]) -> f64 {
        self.alpha[0]
            + self.alpha[1..]
                .iter()
                .zip(covariates)
                .map(|(a, x)| a * x)
                .sum::<f64>()
    }

    #[inline]
    pub fn predict(&self, covariates: &[f64]) -> f64 {
        logistic(self.linear_predictor(covariates))
    }
}

struct Evaluation {
    loglik: f64,
    /// Summed score.
    grad: DVector<f64>,
    /// Summed information `Σ e(1-e) d d'`.
    info: DMatrix<f64>,
}

fn evaluate(rows: &[SubjectRow], alpha: &[f64]) -> Evaluation {
    let k = alpha.len();
    let mut grad = vec![0.0; k];
    // packed upper triangle
    let mut info = vec![0.0; k * (k + 1) / 2];
    let mut loglik = 0.0;
    let mut d = vec![0.0; k];
    d[0] = 1.0;
    for row in rows {
        d[1..].copy_from_slice(&row.covariates);
        let eta: f64 = alpha.iter().zip(&d).map(|(a, x)| a * x).sum();
        let e = logistic(eta);
        let s = if row.in_trial { 1.0 } else { 0.0 };
        // log(1 + exp(eta)) without overflow
        let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
        loglik += s * eta - softplus;
        let r = s - e;
        let v = e * (1.0 - e);
        let mut idx = 0;
        for i in 0..k {
            grad[i] += r * d[i];
            let vdi = v * d[i];
            for j in i..k {
                info[idx] += vdi * d[j];
                idx += 1;
            }
        }
    }
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = info[idx];
            m[(j, i)] = info[idx];
            idx += 1;
        }
    }
    Evaluation {
        loglik,
        grad: DVector::from_vec(grad),
        info: m,
    }
}

/// Bernoulli log-likelihood of the study indicator at `alpha`.
pub fn log_likelihood(sample: &CombinedSample, alpha: &[f64]) -> f64 {
    evaluate(sample.rows(), alpha).loglik
}

/// Maximum-likelihood logistic fit of trial membership on `[1, X]` by
/// Newton–Raphson with step halving.
///
/// Starts from zero slopes and intercept `logit(n_trial / n)`. Returns a fit
/// with `converged = false` when `max_iter` is exhausted.
pub fn fit_ps_logistic(sample: &CombinedSample, opts: &PsOptions) -> Result<PsModelFit> {
    let n = sample.len();
    let k = sample.n_covariates() + 1;
    if n < k + 1 {
        return Err(Error::TooFewRows {
            needed: k + 1,
            found: n,
        });
    }
    let n_trial = sample.n_trial();
    if n_trial == 0 || n_trial == n {
        return Err(Error::Separation {
            iteration: 0,
            index: 0,
            value: f64::INFINITY,
        });
    }
    let mut alpha = vec![0.0; k];
    alpha[0] = logit(n_trial as f64 / n as f64);
    fit_from(sample.rows(), alpha, opts)
}

fn fit_from(rows: &[SubjectRow], mut alpha: Vec<f64>, opts: &PsOptions) -> Result<PsModelFit> {
    let n = rows.len() as f64;
    let mut state = evaluate(rows, &alpha);
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let grad_norm = state.grad.norm() / n;
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        let step = spd_solve(&state.info, &state.grad).ok_or(Error::RankDeficient("propensity design"))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = alpha
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + scale * s)
                .collect();
            if let Some((index, value)) = cand
                .iter()
                .enumerate()
                .find(|(_, a)| !a.is_finite() || a.abs() > SEPARATION_BOUND)
            {
                return Err(Error::Separation {
                    iteration: iterations,
                    index,
                    value: value.abs(),
                });
            }
            let next = evaluate(rows, &cand);
            let slack = 1e-12 * state.loglik.abs().max(1.0);
            if next.loglik.is_finite() && next.loglik >= state.loglik - slack {
                alpha = cand;
                state = next;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            if !state.loglik.is_finite() {
                return Err(Error::Separation {
                    iteration: iterations,
                    index: 0,
                    value: f64::NAN,
                });
            }
            // no ascent direction left at machine precision
            break;
        }
    }
    let final_gradient_norm = state.grad.norm() / n;
    let cov_alpha = spd_inverse(&state.info).ok_or(Error::RankDeficient("propensity design"))?;
    Ok(PsModelFit {
        alpha,
        cov_alpha,
        converged,
        iterations,
        final_gradient_norm,
    })
}

/// Per-subject weights aligned with the sample rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// Zero exactly on population rows.
    pub weights: Vec<f64>,
    /// Fitted propensity scores for every row.
    pub ps: Vec<f64>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Stuart–Cole weights from a converged propensity fit.
pub fn compute_weights(fit: &PsModelFit, sample: &CombinedSample) -> Result<WeightVector> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let ps = sample
        .rows()
        .iter()
        .map(|r| fit.predict(&r.covariates))
        .collect::<Vec<_>>();
    weights_from_scores(ps, sample)
}

/// Weights from already-computed propensity scores, one per row.
pub fn weights_from_scores(ps: Vec<f64>, sample: &CombinedSample) -> Result<WeightVector> {
    if let Some((row, &value)) = ps
        .iter()
        .enumerate()
        .find(|(_, &e)| !(e > PS_EPS && e < 1.0 - PS_EPS))
    {
        return Err(Error::DegeneratePs { row, value });
    }
    let n = sample.len() as f64;
    let n_trial = sample.n_trial();
    if n_trial == sample.len() {
        return Err(Error::EmptyPopulation);
    }
    let p_hat = n_trial as f64 / n;
    let marginal = p_hat / (1.0 - p_hat);
    let weights = sample
        .rows()
        .iter()
        .zip(&ps)
        .map(|(r, &e)| if r.in_trial { (1.0 - e) / e * marginal } else { 0.0 })
        .collect();
    Ok(WeightVector { weights, ps })
}

/// Mean propensity score in the trial minus that in the population.
pub fn overlap_delta_p(weights: &WeightVector, sample: &CombinedSample) -> Result<f64> {
    let (mut st, mut nt, mut sp, mut np) = (0.0, 0usize, 0.0, 0usize);
    for (r, e) in sample.rows().iter().zip(&weights.ps) {
        if r.in_trial {
            st += e;
            nt += 1;
        } else {
            sp += e;
            np += 1;
        }
    }
    if np == 0 {
        return Err(Error::EmptyPopulation);
    }
    if nt == 0 {
        return Err(Error::TooFewRows { needed: 1, found: 0 });
    }
    Ok(st / nt as f64 - sp / np as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub total: f64,
    pub min_trial: f64,
    pub max: f64,
    /// Largest single weight as a fraction of the total.
    pub max_share: f64,
    /// Kish effective sample size of the trial.
    pub effective_n: f64,
    pub warnings: Vec<String>,
}

pub fn summarize_weights(weights: &WeightVector, sample: &CombinedSample) -> WeightSummary {
    let trial: Vec<f64> = sample
        .rows()
        .iter()
        .zip(&weights.weights)
        .filter(|(r, _)| r.in_trial)
        .map(|(_, &w)| w)
        .collect();
    let total: f64 = trial.iter().sum();
    let sq: f64 = trial.iter().map(|w| w * w).sum();
    let max = trial.iter().cloned().fold(0.0, f64::max);
    let min_trial = trial.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_share = if total > 0.0 { max / total } else { f64::NAN };
    let mut warnings = Vec::new();
    if max_share > MAX_WEIGHT_SHARE {
        warnings.push(format!(
            "largest weight carries {:.1}% of the total weight",
            100.0 * max_share
        ));
    }
    WeightSummary {
        total,
        min_trial,
        max,
        max_share,
        effective_n: total * total / sq,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> CombinedSample {
        let xs = [0.1, 0.9, 0.3, 0.4, 0.8, 0.6, 0.2, 0.7];
        let ss = [0, 1, 0, 1, 1, 0, 0, 1];
        let rows = xs
            .iter()
            .zip(ss)
            .enumerate()
            .map(|(i, (&x, s))| {
                if s == 1 {
                    SubjectRow::trial(i % 2 == 0, x, &[x])
                } else {
                    SubjectRow::population(&[x])
                }
            })
            .collect();
        CombinedSample::new(rows, vec!["x".into()]).unwrap()
    }

    #[test]
    fn score_equations_hold_at_fit() {
        let s = toy();
        let fit = fit_ps_logistic(&s, &PsOptions::default()).unwrap();
        assert!(fit.converged);
        let mut g = [0.0; 2];
        for r in s.rows() {
            let e = fit.predict(&r.covariates);
            let res = if r.in_trial { 1.0 } else { 0.0 } - e;
            g[0] += res;
            g[1] += res * r.covariates[0];
        }
        assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9, "{g:?}");
        // covariance is the inverse information, hence symmetric PD
        assert_abs_diff_eq!(fit.cov_alpha[(0, 1)], fit.cov_alpha[(1, 0)]);
        assert!(fit.cov_alpha[(0, 0)] > 0.0 && fit.cov_alpha.determinant() > 0.0);
    }

    #[test]
    fn separated_data_reports_separation() {
        let rows = (0..10)
            .map(|i| {
                let x = i as f64;
                if i < 5 {
                    SubjectRow::population(&[x])
                } else {
                    SubjectRow::trial(i % 2 == 0, 0.0, &[x])
                }
            })
            .collect();
        let s = CombinedSample::new(rows, vec!["x".into()]).unwrap();
        let err = fit_ps_logistic(&s, &PsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
    }

    #[test]
    fn collinear_covariates_are_rank_deficient() {
        let rows = (0..12)
            .map(|i| {
                let x = (i % 5) as f64;
                if i % 3 == 0 {
                    SubjectRow::population(&[x, 2.0 * x])
                } else {
                    SubjectRow::trial(i % 2 == 0, 0.0, &[x, 2.0 * x])
                }
            })
            .collect();
        let s = CombinedSample::new(rows, vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(
            fit_ps_logistic(&s, &PsOptions::default()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn iteration_cap_flags_unconverged() {
        let s = toy();
        let fit = fit_ps_logistic(&s, &PsOptions { max_iter: 1, tol: 1e-14 }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
        assert!(matches!(compute_weights(&fit, &s), Err(Error::NotConverged)));
    }

    #[test]
    fn constant_score_gives_unit_weights() {
        let s = toy();
        let p = s.n_trial() as f64 / s.len() as f64;
        let w = weights_from_scores(vec![p; s.len()], &s).unwrap();
        for (r, w) in s.rows().iter().zip(&w.weights) {
            if r.in_trial {
                assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-15);
            } else {
                assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn weight_formula_by_substitution() {
        // 1 trial row out of 5 gives p = 0.2; e = 0.5 gives (0.5/0.5)(0.2/0.8)
        let rows = vec![
            SubjectRow::trial(true, 1.0, &[0.0]),
            SubjectRow::population(&[0.0]),
            SubjectRow::population(&[0.0]),
            SubjectRow::population(&[0.0]),
            SubjectRow::population(&[0.0]),
        ];
        let s = CombinedSample::new(rows, vec!["x".into()]).unwrap();
        let w = weights_from_scores(vec![0.5; 5], &s).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.25, epsilon = 1e-15);
        assert!(w.weights[1..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn degenerate_scores_rejected() {
        let s = toy();
        let mut ps = vec![0.5; s.len()];
        ps[3] = 1e-13;
        assert!(matches!(
            weights_from_scores(ps, &s),
            Err(Error::DegeneratePs { row: 3, .. })
        ));
    }

    #[test]
    fn delta_p_and_summary() {
        let s = toy();
        let fit = fit_ps_logistic(&s, &PsOptions::default()).unwrap();
        let w = compute_weights(&fit, &s).unwrap();
        let dp = overlap_delta_p(&w, &s).unwrap();
        let (mut a, mut b) = (vec![], vec![]);
        for (r, e) in s.rows().iter().zip(&w.ps) {
            if r.in_trial { a.push(*e) } else { b.push(*e) }
        }
        let expect = a.iter().sum::<f64>() / a.len() as f64 - b.iter().sum::<f64>() / b.len() as f64;
        assert_abs_diff_eq!(dp, expect, epsilon = 1e-15);
        let sum = summarize_weights(&w, &s);
        assert!(sum.total > 0.0 && sum.effective_n <= 4.0 + 1e-12);
        // four trial subjects, so the largest share is at least 25%
        assert!(!sum.warnings.is_empty());
    }
}
