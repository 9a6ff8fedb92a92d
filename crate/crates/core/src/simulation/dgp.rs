//! Data-generating processes for the single- and double-layer designs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::ScenarioParams;
use crate::data::{CombinedSample, SubjectRow};
use crate::error::{Error, Result};

/// Smallest trial for which a replicate is analyzed.
pub const MIN_TRIAL: usize = 4;

pub(crate) fn covariate_names() -> Vec<String> {
    vec!["x".to_string()]
}

/// Treatment flags for `n` trial subjects: exactly half treated, a fair coin
/// deciding which arm gets the extra subject when `n` is odd.
fn assign_treatment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<bool> {
    let n_treated = if n % 2 == 1 && rng.random_bool(0.5) {
        n / 2 + 1
    } else {
        n / 2
    };
    let mut flags: Vec<bool> = (0..n).map(|i| i < n_treated).collect();
    flags.shuffle(rng);
    flags
}

fn outcome<R: Rng + ?Sized>(p: &ScenarioParams, x: f64, treated: bool, rng: &mut R) -> f64 {
    let t = if treated { 1.0 } else { 0.0 };
    let eps: f64 = rng.sample(StandardNormal);
    p.beta0 + p.beta1 * x + p.beta2 * t + p.beta3 * x * t + p.sigma * eps
}

/// One combined sample of `n_total` subjects: `X ~ U(0,1)`, `S ~
/// Bernoulli(e(X))`, exact-half randomization in the trial and outcomes for
/// trial subjects only.
pub fn generate_dataset<R: Rng + ?Sized>(params: &ScenarioParams, rng: &mut R) -> Result<CombinedSample> {
    let n = params.n_total;
    let mut xs = Vec::with_capacity(n);
    let mut in_trial = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let s = rng.random::<f64>() < params.selection_probability(x);
        xs.push(x);
        in_trial.push(s);
    }
    let n_trial = in_trial.iter().filter(|&&s| s).count();
    if n_trial < MIN_TRIAL || n_trial == n {
        return Err(Error::DegenerateReplicate {
            n_trial,
            n_population: n - n_trial,
        });
    }
    let mut flags = assign_treatment(n_trial, rng).into_iter();
    let rows = xs
        .iter()
        .zip(&in_trial)
        .map(|(&x, &s)| {
            if s {
                let t = flags.next().expect("one flag per trial subject");
                SubjectRow::trial(t, outcome(params, x, t, rng), &[x])
            } else {
                SubjectRow::population(&[x])
            }
        })
        .collect();
    Ok(CombinedSample::from_checked_rows(rows, covariate_names()))
}

/// Draws from the density proportional to `e(x)` on (0, 1) by rejection
/// against the uniform envelope.
pub fn draw_trial_covariate<R: Rng + ?Sized>(params: &ScenarioParams, rng: &mut R) -> f64 {
    let bound = params
        .selection_probability(0.0)
        .max(params.selection_probability(1.0));
    loop {
        let x: f64 = rng.random();
        if rng.random::<f64>() * bound <= params.selection_probability(x) {
            return x;
        }
    }
}

/// A new trial for the fixed population of `outer`. Population rows are
/// copied unchanged; trial rows keep their positions and count, with `X`
/// redrawn from `P(X | S = 1)`, a fresh exact-half randomization and new
/// outcomes.
pub fn generate_inner_trial<R: Rng + ?Sized>(
    outer: &CombinedSample,
    params: &ScenarioParams,
    rng: &mut R,
) -> Result<CombinedSample> {
    let n_trial = outer.n_trial();
    if n_trial < MIN_TRIAL || n_trial == outer.len() {
        return Err(Error::DegenerateReplicate {
            n_trial,
            n_population: outer.len() - n_trial,
        });
    }
    let xs: Vec<f64> = (0..n_trial).map(|_| draw_trial_covariate(params, rng)).collect();
    let flags = assign_treatment(n_trial, rng);
    let mut fresh = xs
        .into_iter()
        .zip(flags)
        .map(|(x, t)| SubjectRow::trial(t, outcome(params, x, t, rng), &[x]));
    let rows = outer
        .rows()
        .iter()
        .map(|r| {
            if r.in_trial {
                fresh.next().expect("one fresh row per trial slot")
            } else {
                r.clone()
            }
        })
        .collect();
    Ok(CombinedSample::from_checked_rows(rows, outer.covariate_names().to_vec()))
}
