//! Scenario parameters and the quadrature-based solvers that tie them to a
//! target selection probability and a target PATE.
//!
//! Covariate `X ~ Uniform(0, 1)`, selection `P(S=1|X) = logistic(α0 + α1 X)`,
//! outcome `Y = β0 + β1 X + β2 T + β3 X T + ε`, `ε ~ N(0, σ²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect, integrate_unit, logistic};

/// Residual SD used when a scenario does not set one. Chosen so the MC SD of
/// the IPW estimator at `(α0, α1, β3, n) = (-3.76, 4, -0.6, 3000)` is 0.141;
/// see `examples/calibrate_sigma.rs`.
pub const DEFAULT_SIGMA: f64 = 0.98;

/// Bracket searched for α0.
pub const ALPHA0_BRACKET: (f64, f64) = (-50.0, 50.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma: f64,
    pub n_total: usize,
    /// Infinite-population PATE `β2 + β3 E(X | S = 0)`.
    pub true_pate: f64,
}

impl ScenarioParams {
    /// Builds a scenario from explicit coefficients; the PATE follows from
    /// them by quadrature.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha0: f64,
        alpha1: f64,
        beta0: f64,
        beta1: f64,
        beta2: f64,
        beta3: f64,
        sigma: f64,
        n_total: usize,
    ) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if n_total < 4 {
            return Err(Error::Config(format!("n_total must be at least 4, got {n_total}")));
        }
        let true_pate = beta2 + beta3 * pop_covariate_mean(alpha0, alpha1);
        Ok(ScenarioParams {
            alpha0,
            alpha1,
            beta0,
            beta1,
            beta2,
            beta3,
            sigma,
            n_total,
            true_pate,
        })
    }

    /// Solves α0 from the selection probability and β2 from the PATE.
    pub fn from_targets(targets: &ScenarioTargets) -> Result<Self> {
        let alpha0 = solve_alpha0(targets.alpha1, targets.target_p)?;
        let beta2 = solve_beta2(targets.true_pate, targets.beta3, alpha0, targets.alpha1);
        ScenarioParams::new(
            alpha0,
            targets.alpha1,
            targets.beta0,
            targets.beta1,
            beta2,
            targets.beta3,
            targets.sigma,
            targets.n_total,
        )
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        ScenarioParams { sigma, ..self.clone() }
    }

    #[inline]
    pub fn selection_probability(&self, x: f64) -> f64 {
        logistic(self.alpha0 + self.alpha1 * x)
    }

    /// Finite-population PATE for a realized population covariate mean.
    pub fn finite_pate(&self, population_mean_x: f64) -> f64 {
        self.beta2 + self.beta3 * population_mean_x
    }

    /// Expected trial fraction `∫ e(x) dx`.
    pub fn sampling_fraction(&self) -> f64 {
        marginal_selection(self.alpha0, self.alpha1)
    }

    /// Checks `true_pate = β2 + β3 E(X | S = 0)` to 1e-6.
    pub fn check_consistency(&self) -> Result<()> {
        let implied = self.beta2 + self.beta3 * pop_covariate_mean(self.alpha0, self.alpha1);
        if (implied - self.true_pate).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "true_pate {} inconsistent with coefficients (implied {implied})",
                self.true_pate
            )));
        }
        Ok(())
    }
}

/// Inputs for [`ScenarioParams::from_targets`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTargets {
    pub alpha1: f64,
    pub target_p: f64,
    pub true_pate: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta3: f64,
    pub sigma: f64,
    pub n_total: usize,
}

impl Default for ScenarioTargets {
    fn default() -> Self {
        ScenarioTargets {
            alpha1: 4.0,
            target_p: 0.2,
            true_pate: -0.3,
            beta0: 0.0,
            beta1: 0.3,
            beta3: -0.6,
            sigma: DEFAULT_SIGMA,
            n_total: 3000,
        }
    }
}

/// `P(S = 1) = ∫₀¹ logistic(α0 + α1 x) dx`.
pub fn marginal_selection(alpha0: f64, alpha1: f64) -> f64 {
    integrate_unit(|x| logistic(alpha0 + alpha1 * x))
}

/// α0 such that the marginal selection probability equals `target_p`.
pub fn solve_alpha0(alpha1: f64, target_p: f64) -> Result<f64> {
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(Error::Config(format!("target P(S=1) must lie in (0,1), got {target_p}")));
    }
    // increasing in alpha0
    bisect(
        |a0| marginal_selection(a0, alpha1) - target_p,
        ALPHA0_BRACKET.0,
        ALPHA0_BRACKET.1,
        1e-13,
    )
}

/// `E(X | S = 0) = ∫ x (1 - e) / ∫ (1 - e)`.
pub fn pop_covariate_mean(alpha0: f64, alpha1: f64) -> f64 {
    let num = integrate_unit(|x| x * (1.0 - logistic(alpha0 + alpha1 * x)));
    let den = integrate_unit(|x| 1.0 - logistic(alpha0 + alpha1 * x));
    num / den
}

/// `E(X | S = 1) = ∫ x e / ∫ e`.
pub fn trial_covariate_mean(alpha0: f64, alpha1: f64) -> f64 {
    let num = integrate_unit(|x| x * logistic(alpha0 + alpha1 * x));
    let den = integrate_unit(|x| logistic(alpha0 + alpha1 * x));
    num / den
}

/// β2 achieving `true_pate` given β3 and the selection model.
pub fn solve_beta2(true_pate: f64, beta3: f64, alpha0: f64, alpha1: f64) -> f64 {
    true_pate - beta3 * pop_covariate_mean(alpha0, alpha1)
}

/// Population overlap diagnostic `E(e | S = 1) - E(e | S = 0)`.
pub fn delta_p_population(alpha0: f64, alpha1: f64) -> f64 {
    let e = |x: f64| logistic(alpha0 + alpha1 * x);
    let p = integrate_unit(e);
    let e2 = integrate_unit(|x| e(x) * e(x));
    let e_1me = integrate_unit(|x| e(x) * (1.0 - e(x)));
    e2 / p - e_1me / (1.0 - p)
}
