//! Point estimates, variance estimates and confidence intervals for the
//! marginal log hazard ratio.

pub mod asymptotic;
pub mod double_resampling;
pub mod naive_bootstrap;
pub mod residuals;
pub mod smooth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coxph::{
    inverse_probability_weights, robust_variance, solve_beta, CoxData, CoxFit,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::{match_on_scalar, MatchResult};
use crate::propensity::{fit_logistic, PropensityFit, PsFormula};
use crate::rng::Stream;

pub use asymptotic::{asymptotic_variance, wald_interval, AsymptoticComponents};
pub use double_resampling::{double_resampling, two_point_multiplier, ResamplingSetup};
pub use naive_bootstrap::naive_bootstrap;
pub use residuals::{h_residuals, martingale_residuals, HResiduals};
pub use smooth::{smooth_conditional_moments, ConditionalMoments};

/// Matching estimator fitted on given scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PsmFit {
    pub matches: MatchResult,
    /// `1 + k_i`.
    pub weights: Vec<f64>,
    pub cox_data: CoxData,
    pub cox: CoxFit,
}

/// Match on `scores`, weight by `1 + k` and solve the weighted partial score
/// equation with treatment as the only covariate.
pub fn fit_psm(ds: &Dataset, scores: &[f64]) -> Result<PsmFit> {
    let matches = match_on_scalar(scores, &ds.treatments())?;
    let weights = matches.weights();
    let cox_data = CoxData::treatment_only(ds)?;
    let cox = solve_beta(&cox_data, &weights)?;
    Ok(PsmFit {
        matches,
        weights,
        cox_data,
        cox,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Unbiased sample variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Estimators of the marginal log hazard ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    /// Cox on treatment alone.
    #[serde(rename = "nai")]
    Naive,
    /// Cox on treatment weighted by inverse probability of treatment.
    #[serde(rename = "ipw")]
    Ipw,
    /// Cox on treatment and covariates.
    #[serde(rename = "reg")]
    Regression,
    /// Matching on the true score; simulation only.
    #[serde(rename = "psm0")]
    PsmTrue,
    /// Matching on the estimated score.
    #[serde(rename = "psm")]
    Psm,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Naive,
        Estimator::Ipw,
        Estimator::Regression,
        Estimator::PsmTrue,
        Estimator::Psm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Naive => "nai",
            Estimator::Ipw => "ipw",
            Estimator::Regression => "reg",
            Estimator::PsmTrue => "psm0",
            Estimator::Psm => "psm",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nai" | "naive" => Ok(Estimator::Naive),
            "ipw" => Ok(Estimator::Ipw),
            "reg" | "regression" => Ok(Estimator::Regression),
            "psm0" => Ok(Estimator::PsmTrue),
            "psm" => Ok(Estimator::Psm),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Variance methods. Only the matching estimator supports all four; the
/// others use the robust sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "software")]
    Software,
    #[serde(rename = "asymp")]
    Asymptotic,
    #[serde(rename = "naiveboot")]
    NaiveBootstrap,
    #[serde(rename = "double-rsp")]
    DoubleResampling,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Software,
        Method::Asymptotic,
        Method::NaiveBootstrap,
        Method::DoubleResampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Software => "software",
            Method::Asymptotic => "asymp",
            Method::NaiveBootstrap => "naiveboot",
            Method::DoubleResampling => "double-rsp",
        }
    }

    pub fn is_bootstrap(self) -> bool {
        matches!(self, Method::NaiveBootstrap | Method::DoubleResampling)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "software" | "software_robust" | "robust" => Ok(Method::Software),
            "asymp" | "asymptotic" => Ok(Method::Asymptotic),
            "naiveboot" | "naive_boot" => Ok(Method::NaiveBootstrap),
            "double-rsp" | "double_resampling" => Ok(Method::DoubleResampling),
            other => Err(Error::Config(format!("unknown variance method `{other}`"))),
        }
    }
}

pub fn parse_list<T: FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// What to estimate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimators: Vec<Estimator>,
    pub methods: Vec<Method>,
    pub ps_formula: PsFormula,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            estimators: vec![Estimator::Psm],
            methods: Method::ALL.to_vec(),
            ps_formula: PsFormula::Identity,
            b: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::Config(format!("alpha must lie in (0, 0.5], got {}", self.alpha)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.methods.iter().any(|m| m.is_bootstrap()) && self.b < 100 {
            return Err(Error::Config(format!(
                "bootstrap methods need B >= 100, got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// Variance of `beta_hat` and the `(1 - alpha)` interval from one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hr_ci_low: f64,
    pub hr_ci_high: f64,
}

impl MethodEstimate {
    fn new(variance: f64, (lo, hi): (f64, f64)) -> Self {
        MethodEstimate {
            variance,
            ci_low: lo,
            ci_high: hi,
            hr_ci_low: lo.exp(),
            hr_ci_high: hi.exp(),
        }
    }

    pub fn covers(&self, beta: f64) -> bool {
        self.ci_low <= beta && beta <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub beta_hat: f64,
    pub hr: f64,
    pub methods: BTreeMap<Method, MethodEstimate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    pub events: usize,
    pub tau: f64,
    pub ps_theta: Vec<f64>,
    pub ps_iterations: usize,
    pub asymptotic: Option<AsymptoticComponents>,
    pub double_resampling_redraws: usize,
    pub naive_bootstrap_redraws: usize,
}

/// Everything one analysis produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub version: String,
    /// Headline estimator: the matching estimator when requested.
    pub estimator: Estimator,
    pub beta_hat: f64,
    pub hr: f64,
    pub methods: BTreeMap<Method, MethodEstimate>,
    pub alpha: f64,
    pub seed: u64,
    #[serde(rename = "B")]
    pub b: usize,
    pub estimators: BTreeMap<Estimator, EstimatorReport>,
    pub diagnostics: Diagnostics,
    pub config: EstimateConfig,
}

fn software(data: &CoxData, weights: &[f64], fit: &CoxFit, alpha: f64) -> Result<MethodEstimate> {
    let v = robust_variance(data, weights, fit)?[(0, 0)];
    Ok(MethodEstimate::new(v, wald_interval(fit.beta[0], v, alpha)))
}

fn single(fit: &CoxFit, methods: BTreeMap<Method, MethodEstimate>) -> EstimatorReport {
    EstimatorReport {
        beta_hat: fit.beta[0],
        hr: fit.beta[0].exp(),
        methods,
    }
}

/// Run `cfg` with the streams rooted at `cfg.seed`.
pub fn estimate_all(ds: &Dataset, cfg: &EstimateConfig, true_scores: Option<&[f64]>) -> Result<InferenceReport> {
    estimate_with_stream(ds, cfg, true_scores, Stream::root(cfg.seed))
}

/// Run `cfg` with every random draw derived from `stream`.
pub fn estimate_with_stream(
    ds: &Dataset,
    cfg: &EstimateConfig,
    true_scores: Option<&[f64]>,
    stream: Stream,
) -> Result<InferenceReport> {
    cfg.validate()?;
    let alpha = cfg.alpha;
    let (n0, n1) = ds.arm_sizes();
    let tau = ds.tau();
    let mut diag = Diagnostics {
        n: ds.len(),
        n0,
        n1,
        events: ds.subjects().iter().filter(|s| s.event && s.time <= tau).count(),
        tau,
        ..Diagnostics::default()
    };
    let needs_ps = cfg
        .estimators
        .iter()
        .any(|e| matches!(e, Estimator::Ipw | Estimator::Psm));
    let ps: Option<PropensityFit> = if needs_ps {
        let fit = fit_logistic(ds, &cfg.ps_formula)?;
        diag.ps_theta = fit.theta.clone();
        diag.ps_iterations = fit.iterations;
        Some(fit)
    } else {
        None
    };
    let with_software = |m: &[Method]| m.contains(&Method::Software);
    let mut estimators = BTreeMap::new();
    for &est in &cfg.estimators {
        let report = match est {
            Estimator::Naive | Estimator::Ipw | Estimator::Regression => {
                let (data, weights) = match est {
                    Estimator::Naive => (CoxData::treatment_only(ds)?, vec![1.0; ds.len()]),
                    Estimator::Ipw => {
                        let scores = &ps.as_ref().expect("fitted above").scores;
                        (
                            CoxData::treatment_only(ds)?,
                            inverse_probability_weights(scores, &ds.treatments()),
                        )
                    }
                    _ => (CoxData::treatment_and_covariates(ds)?, vec![1.0; ds.len()]),
                };
                let fit = solve_beta(&data, &weights)?;
                let mut methods = BTreeMap::new();
                if with_software(&cfg.methods) {
                    methods.insert(Method::Software, software(&data, &weights, &fit, alpha)?);
                }
                single(&fit, methods)
            }
            Estimator::PsmTrue => {
                let scores = true_scores.ok_or_else(|| {
                    Error::Config("psm0 needs the true propensity score (simulation only)".into())
                })?;
                let psm = fit_psm(ds, scores)?;
                let mut methods = BTreeMap::new();
                if with_software(&cfg.methods) {
                    methods.insert(
                        Method::Software,
                        software(&psm.cox_data, &psm.weights, &psm.cox, alpha)?,
                    );
                }
                single(&psm.cox, methods)
            }
            Estimator::Psm => {
                let ps = ps.as_ref().expect("fitted above");
                psm_report(ds, cfg, ps, stream, &mut diag)?
            }
        };
        estimators.insert(est, report);
    }
    let headline = if estimators.contains_key(&Estimator::Psm) {
        Estimator::Psm
    } else {
        cfg.estimators[0]
    };
    let top = estimators[&headline].clone();
    Ok(InferenceReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        estimator: headline,
        beta_hat: top.beta_hat,
        hr: top.hr,
        methods: top.methods,
        alpha,
        seed: cfg.seed,
        b: cfg.b,
        estimators,
        diagnostics: diag,
        config: cfg.clone(),
    })
}

fn psm_report(
    ds: &Dataset,
    cfg: &EstimateConfig,
    ps: &PropensityFit,
    stream: Stream,
    diag: &mut Diagnostics,
) -> Result<EstimatorReport> {
    let alpha = cfg.alpha;
    let psm = fit_psm(ds, &ps.scores)?;
    let beta_hat = psm.cox.beta[0];
    let info = psm.cox.neg_hessian[0];
    let mut methods = BTreeMap::new();
    let wants = |m: Method| cfg.methods.contains(&m);
    if wants(Method::Software) {
        methods.insert(
            Method::Software,
            software(&psm.cox_data, &psm.weights, &psm.cox, alpha)?,
        );
    }
    if wants(Method::Asymptotic) || wants(Method::DoubleResampling) {
        let w = ds.treatments();
        let h = h_residuals(&psm)?;
        let moments = smooth_conditional_moments(&h, &ps.scores, &w)?;
        let secondary = crate::matching::match_on_covariates(ds)?;
        let res = martingale_residuals(&h, &ps.scores, &w, &moments, &secondary)?;
        if wants(Method::Asymptotic) {
            let comps = asymptotic_variance(ds, &psm, ps, &res)?;
            let v = comps.v2 / ds.len() as f64;
            methods.insert(
                Method::Asymptotic,
                MethodEstimate::new(v, wald_interval(beta_hat, v, alpha)),
            );
            diag.asymptotic = Some(comps);
        }
        if wants(Method::DoubleResampling) {
            let setup = ResamplingSetup::new(ds, ps, &psm.matches, &res, &moments, stream)?;
            let out = double_resampling(&setup, beta_hat, info, cfg.b, alpha, stream)?;
            diag.double_resampling_redraws = out.redraws;
            methods.insert(Method::DoubleResampling, MethodEstimate::new(out.variance, out.ci));
        }
    }
    if wants(Method::NaiveBootstrap) {
        let out = naive_bootstrap(ds, &cfg.ps_formula, cfg.b, alpha, stream)?;
        diag.naive_bootstrap_redraws = out.redraws;
        methods.insert(Method::NaiveBootstrap, MethodEstimate::new(out.variance, out.ci));
    }
    Ok(single(&psm.cox, methods))
}
