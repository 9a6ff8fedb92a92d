//! TOML scenario files.
//!
//! ```toml
//! [run]
//! layers = "single"
//! reps = 1000
//! seed = 2024
//! variance = ["MEST", "SURVEY_LIN", "LINCOMB", "WSB"]
//!
//! [defaults]
//! alpha1 = 4.0
//! target_p = 0.2
//! true_pate = -0.3
//!
//! [[scenario]]
//! name = "s3"
//! beta3 = -0.6
//! ```
//!
//! Each `[[scenario]]` inherits unset keys from `[defaults]`. Exactly one of
//! `alpha0`/`target_p` and one of `beta2`/`true_pate` must be known.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::driver::{Layers, SimulationConfig};
use super::params::{pop_covariate_mean, solve_alpha0, solve_beta2, ScenarioParams, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::estimators::EstimatorId;
use crate::ps::PsOptions;
use crate::variance::VarianceMethodId;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: Option<String>,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub target_p: Option<f64>,
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub beta3: Option<f64>,
    pub true_pate: Option<f64>,
    pub sigma: Option<f64>,
    pub n_total: Option<usize>,
}

impl ScenarioEntry {
    fn or(&self, d: &ScenarioEntry) -> ScenarioEntry {
        ScenarioEntry {
            name: self.name.clone().or_else(|| d.name.clone()),
            alpha0: self.alpha0.or(d.alpha0),
            alpha1: self.alpha1.or(d.alpha1),
            target_p: self.target_p.or(d.target_p),
            beta0: self.beta0.or(d.beta0),
            beta1: self.beta1.or(d.beta1),
            beta2: self.beta2.or(d.beta2),
            beta3: self.beta3.or(d.beta3),
            true_pate: self.true_pate.or(d.true_pate),
            sigma: self.sigma.or(d.sigma),
            n_total: self.n_total.or(d.n_total),
        }
    }

    /// Resolves derived coefficients. Keys set on the entry itself win over
    /// keys inherited from `defaults`, so a scenario may override `beta2`
    /// while the defaults carry `true_pate`.
    pub fn resolve(&self, defaults: &ScenarioEntry) -> Result<ScenarioParams> {
        let label = self.name.clone().unwrap_or_else(|| "scenario".into());
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Error::Config(format!("{label}: `{k}` is required")));
        let m = self.or(defaults);
        let alpha1 = need(m.alpha1, "alpha1")?;
        let alpha0 = match (self.alpha0, self.target_p) {
            (Some(_), Some(_)) => return Err(Error::Config(format!("{label}: set only one of alpha0, target_p"))),
            (Some(a), None) => a,
            (None, Some(p)) => solve_alpha0(alpha1, p)?,
            (None, None) => match (defaults.alpha0, defaults.target_p) {
                (Some(_), Some(_)) => return Err(Error::Config("defaults: set only one of alpha0, target_p".into())),
                (Some(a), None) => a,
                (None, Some(p)) => solve_alpha0(alpha1, p)?,
                (None, None) => return Err(Error::Config(format!("{label}: `alpha0` or `target_p` is required"))),
            },
        };
        let beta3 = need(m.beta3, "beta3")?;
        let beta2 = match (self.beta2, self.true_pate) {
            (Some(_), Some(_)) => return Err(Error::Config(format!("{label}: set only one of beta2, true_pate"))),
            (Some(b), None) => b,
            (None, Some(t)) => solve_beta2(t, beta3, alpha0, alpha1),
            (None, None) => match (defaults.beta2, defaults.true_pate) {
                (Some(_), Some(_)) => return Err(Error::Config("defaults: set only one of beta2, true_pate".into())),
                (Some(b), None) => b,
                (None, Some(t)) => solve_beta2(t, beta3, alpha0, alpha1),
                (None, None) => return Err(Error::Config(format!("{label}: `beta2` or `true_pate` is required"))),
            },
        };
        let params = ScenarioParams::new(
            alpha0,
            alpha1,
            m.beta0.unwrap_or(0.0),
            m.beta1.unwrap_or(0.3),
            beta2,
            beta3,
            m.sigma.unwrap_or(DEFAULT_SIGMA),
            m.n_total.unwrap_or(3000),
        )?;
        debug_assert!((params.true_pate - (beta2 + beta3 * pop_covariate_mean(alpha0, alpha1))).abs() < 1e-12);
        Ok(params)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub layers: Option<Layers>,
    pub reps: Option<usize>,
    pub inner_reps: Option<usize>,
    pub seed: Option<u64>,
    pub estimators: Option<Vec<EstimatorId>>,
    pub variance: Option<Vec<VarianceMethodId>>,
    pub bootstrap_reps: Option<usize>,
    pub bootstrap_subsample: Option<usize>,
    pub level: Option<f64>,
    pub ps_max_iter: Option<usize>,
    pub ps_tol: Option<f64>,
}

impl RunSection {
    /// Default variance methods for a layer design.
    pub fn default_methods(layers: Layers) -> Vec<VarianceMethodId> {
        use VarianceMethodId::*;
        match layers {
            Layers::Single => vec![Mest, SurveyLin, Lincomb, Rb, Wsb],
            Layers::Double => vec![Mest, SurveyLin, Lincomb, Wawsb],
        }
    }

    pub fn to_config(&self) -> SimulationConfig {
        let base = SimulationConfig::default();
        let layers = self.layers.unwrap_or_default();
        let ps_default = PsOptions::default();
        SimulationConfig {
            layers,
            reps: self.reps.unwrap_or(base.reps),
            inner_reps: self.inner_reps.unwrap_or(base.inner_reps),
            estimators: self.estimators.clone().unwrap_or(base.estimators),
            methods: self.variance.clone().unwrap_or_else(|| Self::default_methods(layers)),
            bootstrap_reps: self.bootstrap_reps.unwrap_or(base.bootstrap_reps),
            bootstrap_subsample: self.bootstrap_subsample,
            level: self.level.unwrap_or(base.level),
            seed: self.seed.unwrap_or(base.seed),
            ps: PsOptions {
                max_iter: self.ps_max_iter.unwrap_or(ps_default.max_iter),
                tol: self.ps_tol.unwrap_or(ps_default.tol),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub defaults: ScenarioEntry,
    #[serde(default)]
    pub scenario: Vec<ScenarioEntry>,
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedScenario {
    pub name: String,
    pub params: ScenarioParams,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Resolved scenarios in file order; the defaults alone form one
    /// scenario when no `[[scenario]]` entry is present.
    pub fn scenarios(&self) -> Result<Vec<NamedScenario>> {
        let entries = if self.scenario.is_empty() {
            vec![ScenarioEntry::default()]
        } else {
            self.scenario.clone()
        };
        entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Ok(NamedScenario {
                    name: e
                        .name
                        .clone()
                        .or_else(|| self.defaults.name.clone())
                        .unwrap_or_else(|| format!("scenario{}", i + 1)),
                    params: e.resolve(&self.defaults)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SWEEP: &str = r#"
[run]
layers = "double"
reps = 50
seed = 9
estimators = ["IPW", "OLS"]

[defaults]
alpha1 = 4.0
target_p = 0.2
true_pate = -0.3
beta3 = -0.6

[[scenario]]
name = "a"

[[scenario]]
name = "b"
alpha1 = 8.0
beta3 = 0.0
n_total = 500

[[scenario]]
name = "c"
beta2 = 0.5
"#;

    #[test]
    fn parses_and_resolves_sweep() {
        let f = ScenarioFile::parse(SWEEP).unwrap();
        let cfg = f.run.to_config();
        assert_eq!(cfg.layers, Layers::Double);
        assert_eq!(cfg.reps, 50);
        assert_eq!(cfg.estimators, vec![EstimatorId::Ipw, EstimatorId::Ols]);
        assert_eq!(cfg.methods, RunSection::default_methods(Layers::Double));
        let s = f.scenarios().unwrap();
        assert_eq!(s.len(), 3);
        assert_abs_diff_eq!(s[0].params.alpha0, -3.76, epsilon = 0.005);
        assert_abs_diff_eq!(s[0].params.true_pate, -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1].params.alpha0, -6.62, epsilon = 0.005);
        assert_eq!(s[1].params.beta2, -0.3);
        assert_eq!(s[1].params.n_total, 500);
        assert_eq!(s[2].params.beta2, 0.5);
        assert_eq!(s[2].params.sigma, DEFAULT_SIGMA);
    }

    #[test]
    fn conflicting_or_missing_keys() {
        let both = "[[scenario]]\nalpha1 = 1\nalpha0 = 0\ntarget_p = 0.2\nbeta3 = 0\ntrue_pate = 0\n";
        assert!(ScenarioFile::parse(both).unwrap().scenarios().is_err());
        let none = "[[scenario]]\nalpha1 = 1\nbeta3 = 0\ntrue_pate = 0\n";
        assert!(ScenarioFile::parse(none).unwrap().scenarios().is_err());
        assert!(ScenarioFile::parse("[run]\nbogus = 1\n").is_err());
    }
}
