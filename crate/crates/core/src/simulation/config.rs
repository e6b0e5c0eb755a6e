//! Declarative scenario description.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{Estimator, Method};
use crate::propensity::PsFormula;

/// Degree of overlap between the arms' score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confounding {
    Weak,
    Medium,
    Strong,
}

impl Confounding {
    pub const ALL: [Confounding; 3] = [Confounding::Weak, Confounding::Medium, Confounding::Strong];

    /// `(theta_0, theta_1, theta_2)` of the treatment model.
    pub fn theta(self) -> [f64; 3] {
        match self {
            Confounding::Weak => [-2.0, 0.5, 0.5],
            Confounding::Medium => [-3.0, 1.2, 1.2],
            Confounding::Strong => [-4.0, 2.0, 2.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Confounding::Weak => "weak",
            Confounding::Medium => "medium",
            Confounding::Strong => "strong",
        }
    }
}

impl FromStr for Confounding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Confounding::Weak),
            "medium" => Ok(Confounding::Medium),
            "strong" => Ok(Confounding::Strong),
            other => Err(Error::Config(format!("unknown confounding level `{other}`"))),
        }
    }
}

/// Whether the fitted score model matches the generating one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsSpec {
    /// Treatment generated from and fitted on `theta' (1, x)`.
    Correct,
    /// Treatment generated from `theta' (1, x^{1/2})`, fitted on `(1, x)`.
    SqrtMisspec,
}

impl PsSpec {
    /// Formula of the generating model.
    pub fn generating(self) -> PsFormula {
        match self {
            PsSpec::Correct => PsFormula::Identity,
            PsSpec::SqrtMisspec => PsFormula::sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PsSpec::Correct => "correct",
            PsSpec::SqrtMisspec => "sqrt_misspec",
        }
    }
}

impl fmt::Display for PsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the control-arm event time is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlOutcome {
    /// Same covariate-dependent law as the treated arm with `beta0 = 0`.
    #[default]
    Covariate,
    /// `Exp(lambda0)`, independent of the covariates.
    Exponential,
}

/// One cell of the simulation design. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// True marginal log hazard ratio.
    pub beta0: f64,
    /// Treatment model `P(W = 1 | X) = 1 / (1 + exp(theta_0 + theta_1 X_1 + theta_2 X_2))`.
    pub theta: [f64; 3],
    pub ps_spec: PsSpec,
    /// Overrides the fitted formula implied by `ps_spec`.
    pub ps_fit: Option<PsFormula>,
    /// Control-arm hazard.
    pub lambda0: f64,
    pub eta: [f64; 2],
    pub control_outcome: ControlOutcome,
    /// Covariate rates; `X_k ~ Exp(lambda_k)`.
    pub lambda_cov: [f64; 2],
    /// Acceptable censored fraction.
    pub censor_target: [f64; 2],
    /// Fixed censoring bound; calibrated when absent.
    pub c_max: Option<f64>,
    pub reps: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub methods: Vec<Method>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 1000,
            beta0: 0.0,
            theta: Confounding::Weak.theta(),
            ps_spec: PsSpec::Correct,
            ps_fit: None,
            lambda0: 4.0,
            eta: [-1.0, -1.0],
            control_outcome: ControlOutcome::Covariate,
            lambda_cov: [1.0, 1.0],
            censor_target: [0.20, 0.30],
            c_max: None,
            reps: 1000,
            b: 200,
            alpha: 0.05,
            seed: 1,
            estimators: Estimator::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
        }
    }
}

impl ScenarioConfig {
    /// A cell of the standard grid.
    pub fn cell(level: Confounding, spec: PsSpec, beta0: f64) -> Self {
        ScenarioConfig {
            theta: level.theta(),
            ps_spec: spec,
            beta0,
            ..ScenarioConfig::default()
        }
    }

    /// Formula the analysis fits.
    pub fn fitted_formula(&self) -> PsFormula {
        self.ps_fit.clone().unwrap_or(PsFormula::Identity)
    }

    /// Level whose `theta` this is, if any.
    pub fn confounding(&self) -> Option<Confounding> {
        Confounding::ALL.into_iter().find(|c| c.theta() == self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 20 {
            return bad(format!("n must be at least 20, got {}", self.n));
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if !(self.lambda0 > 0.0) || self.lambda_cov.iter().any(|&l| !(l > 0.0)) {
            return bad("rates must be positive".into());
        }
        if self.eta.iter().any(|&e| e > 0.0) {
            return bad("eta must be non-positive for the survival function to vanish".into());
        }
        // d/dt of the conditional survival at t = 0 must be non-positive for
        // every x >= 0, and the polynomial factor stays positive for eta <= 0
        let slope: f64 = self
            .eta
            .iter()
            .zip(&self.lambda_cov)
            .map(|(e, l)| -e / l)
            .sum();
        let floor = self.lambda0.min(self.lambda0 * self.beta0.exp());
        if slope > floor + 1e-12 {
            return bad(format!(
                "sum of -eta_k / lambda_k = {slope} exceeds min(lambda0, lambda0 exp(beta0)) = {floor}"
            ));
        }
        let [lo, hi] = self.censor_target;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("censor_target must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]"));
        }
        if let Some(c) = self.c_max {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("c_max must be positive, got {c}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha must lie in (0, 0.5], got {}", self.alpha));
        }
        if self.methods.iter().any(|m| m.is_bootstrap()) && self.b < 100 {
            return bad(format!("bootstrap methods need B >= 100, got {}", self.b));
        }
        Ok(())
    }

    /// Parse TOML (`.toml`) or JSON (anything else).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ScenarioConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// All 18 standard cells: three `beta0`, three confounding levels, two
/// specifications.
pub fn standard_grid(base: &ScenarioConfig) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for beta0 in [0.0, -0.5, 0.5] {
        for spec in [PsSpec::Correct, PsSpec::SqrtMisspec] {
            for level in Confounding::ALL {
                out.push(ScenarioConfig {
                    theta: level.theta(),
                    ps_spec: spec,
                    beta0,
                    ..base.clone()
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ScenarioConfig::default().validate().unwrap();
        for cfg in standard_grid(&ScenarioConfig::default()) {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn survival_constraint_is_enforced() {
        let cfg = ScenarioConfig {
            beta0: -1.0,
            ..ScenarioConfig::default()
        };
        // 4 e^{-1} = 1.47 < 2
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = "n = 500\nbeta0 = -0.5\ntheta = [-3.0, 1.2, 1.2]\nps_spec = \"sqrt_misspec\"\nB = 150\nmethods = [\"software\", \"double-rsp\"]\n";
        let cfg: ScenarioConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.n, 500);
        assert_eq!(cfg.confounding(), Some(Confounding::Medium));
        assert_eq!(cfg.ps_spec, PsSpec::SqrtMisspec);
        assert_eq!(cfg.methods, vec![Method::Software, Method::DoubleResampling]);
        let back: ScenarioConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<ScenarioConfig>("nn = 3").is_err());
    }
}
