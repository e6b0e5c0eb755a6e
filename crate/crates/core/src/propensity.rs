//! Logistic propensity model `e(x) = P(W = 1 | x)`.
//!
//! The linear predictor is `theta' (1, f(x))` where `f` is a per-column
//! transform ([`PsFormula`]); the intercept is always present. Fitting is
//! Newton-Raphson on the Bernoulli log-likelihood with step halving.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Subject};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
/// Beyond this `|theta|_inf` fitted scores saturate in double precision.
pub const SEPARATION_THRESHOLD: f64 = 30.0;
/// Largest accepted `|theta_j| sd(x_j)`: an odds ratio of `e^10` per
/// standard deviation only arises when the arms are (nearly) separated.
pub const STANDARDIZED_THRESHOLD: f64 = 10.0;

/// Covariate transform feeding the linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsFormula {
    #[default]
    Identity,
    /// `x_j^{p_j}`; a single power applies to every column. Non-integer powers
    /// need non-negative covariates.
    Power(Vec<f64>),
}

impl PsFormula {
    pub fn sqrt() -> Self {
        PsFormula::Power(vec![0.5])
    }

    fn power(&self, j: usize) -> f64 {
        match self {
            PsFormula::Identity => 1.0,
            PsFormula::Power(p) if p.len() == 1 => p[0],
            PsFormula::Power(p) => p.get(j).copied().unwrap_or(1.0),
        }
    }

    /// `(1, f(x_1), ..., f(x_d))`.
    pub fn design_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let PsFormula::Power(p) = self {
            if p.len() > 1 && p.len() != x.len() {
                return Err(Error::Invalid(format!(
                    "formula has {} powers for {} covariates",
                    p.len(),
                    x.len()
                )));
            }
        }
        let mut row = Vec::with_capacity(x.len() + 1);
        row.push(1.0);
        for (j, &v) in x.iter().enumerate() {
            let p = self.power(j);
            let t = if p == 1.0 {
                v
            } else if p == 0.5 {
                v.sqrt()
            } else {
                v.powf(p)
            };
            if !t.is_finite() {
                return Err(Error::Invalid(format!(
                    "covariate {} = {v} cannot be raised to the power {p}",
                    j + 1
                )));
            }
            row.push(t);
        }
        Ok(row)
    }
}

impl fmt::Display for PsFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsFormula::Identity => write!(f, "identity"),
            PsFormula::Power(p) if p.len() == 1 && p[0] == 0.5 => write!(f, "sqrt"),
            PsFormula::Power(p) => {
                let parts: Vec<String> = p.iter().map(f64::to_string).collect();
                write!(f, "pow:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for PsFormula {
    type Err = Error;

    /// `identity`, `sqrt`, or `pow:p1,p2,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" | "linear" => Ok(PsFormula::Identity),
            "sqrt" => Ok(PsFormula::sqrt()),
            other => {
                let powers = other
                    .strip_prefix("pow:")
                    .ok_or_else(|| Error::Config(format!("unknown ps formula `{other}`")))?;
                let p = powers
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad power `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PsFormula::Power(p))
            }
        }
    }
}

/// Row-major `n x p` design matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    formula: PsFormula,
}

impl DesignMatrix {
    pub fn build(ds: &Dataset, formula: &PsFormula) -> Result<Self> {
        let cols = ds.dim() + 1;
        let mut data = Vec::with_capacity(ds.len() * cols);
        for s in ds.subjects() {
            data.extend(formula.design_row(&s.x)?);
        }
        Ok(DesignMatrix {
            rows: ds.len(),
            cols,
            data,
            formula: formula.clone(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_sd(&self, j: usize) -> f64 {
        let n = self.rows as f64;
        let mean = (0..self.rows).map(|i| self.row(i)[j]).sum::<f64>() / n;
        let ss = (0..self.rows).map(|i| (self.row(i)[j] - mean).powi(2)).sum::<f64>();
        (ss / n).sqrt()
    }

    pub fn formula(&self) -> &PsFormula {
        &self.formula
    }

    pub fn linear_predictor(&self, i: usize, theta: &[f64]) -> f64 {
        dot(self.row(i), theta)
    }

    /// Scores `e(x_i' theta)` for every row.
    pub fn scores(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| logistic(self.linear_predictor(i, theta)))
            .collect()
    }

    fn is_rank_deficient(&self) -> bool {
        // Column-normalised Gram matrix, so scale differences between
        // covariates do not masquerade as collinearity.
        let p = self.cols;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..p {
                for b in 0..=a {
                    gram[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let norms: Vec<f64> = (0..p).map(|a| gram[(a, a)].sqrt()).collect();
        if norms.iter().any(|&v| v == 0.0) {
            return true;
        }
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] /= norms[a] * norms[b];
            }
        }
        let eig = gram.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        min <= 1e-12 * max
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `1 / (1 + exp(-z))`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood `sum_i w_i log e_i + (1 - w_i) log(1 - e_i)`.
pub fn log_likelihood(design: &DesignMatrix, treated: &[bool], theta: &[f64]) -> f64 {
    (0..design.rows)
        .map(|i| {
            let z = design.linear_predictor(i, theta);
            if treated[i] {
                z - softplus(z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

/// Fitted propensity model.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// Intercept first.
    pub theta: Vec<f64>,
    pub scores: Vec<f64>,
    /// Total information `sum_i e_i (1 - e_i) x_i x_i'` at `theta`; divide by
    /// `n` for the per-observation information.
    pub fisher_info: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub formula: PsFormula,
}

impl PropensityFit {
    pub fn score_for(&self, x: &[f64]) -> Result<f64> {
        let row = self.formula.design_row(x)?;
        Ok(logistic(dot(&row, &self.theta)))
    }

    /// `d e(x' theta) / d theta = e (1 - e) x`.
    pub fn score_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = self.formula.design_row(x)?;
        let e = logistic(dot(&row, &self.theta));
        Ok(row.iter().map(|v| e * (1.0 - e) * v).collect())
    }
}

struct NewtonState {
    gradient: DVector<f64>,
    info: DMatrix<f64>,
    loglik: f64,
}

fn newton_state(design: &DesignMatrix, treated: &[bool], theta: &[f64]) -> NewtonState {
    let p = design.cols;
    let mut gradient = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    for i in 0..design.rows {
        let r = design.row(i);
        let z = dot(r, theta);
        let e = logistic(z);
        let resid = f64::from(u8::from(treated[i])) - e;
        let v = e * (1.0 - e);
        loglik += if treated[i] { z - softplus(z) } else { -softplus(z) };
        for a in 0..p {
            gradient[a] += resid * r[a];
            for b in 0..=a {
                info[(a, b)] += v * r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    NewtonState {
        gradient,
        info,
        loglik,
    }
}

/// Maximum-likelihood fit on a prepared design.
pub fn fit_design(design: &DesignMatrix, treated: &[bool]) -> Result<PropensityFit> {
    if treated.len() != design.rows {
        return Err(Error::Invalid("treatment vector length mismatch".into()));
    }
    let n1 = treated.iter().filter(|&&w| w).count();
    if n1 == 0 {
        return Err(Error::EmptyArm { arm: 1, hint: "" });
    }
    if n1 == treated.len() {
        return Err(Error::EmptyArm { arm: 0, hint: "" });
    }
    if design.is_rank_deficient() {
        return Err(Error::RankDeficient);
    }

    let p = design.cols;
    let mut theta = vec![0.0; p];
    let mut state = newton_state(design, treated, &theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        if state.gradient.amax() <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match state.info.clone().cholesky() {
            Some(ch) => ch.solve(&state.gradient),
            None => {
                return Err(Error::Separation {
                    iterations,
                    max_abs_theta: theta.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                })
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let ll = log_likelihood(design, treated, &cand);
            if ll >= state.loglik - 1e-12 * state.loglik.abs() {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let Some(cand) = accepted else {
            // no ascent direction left at working precision
            break;
        };
        theta = cand;
        let max_abs = theta.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if max_abs > SEPARATION_THRESHOLD {
            return Err(Error::Separation {
                iterations,
                max_abs_theta: max_abs,
            });
        }
        state = newton_state(design, treated, &theta);
    }
    if !converged {
        if state.gradient.amax() <= GRADIENT_TOLERANCE {
            converged = true;
        } else {
            return Err(Error::Separation {
                iterations,
                max_abs_theta: theta.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            });
        }
    }
    // Under separation the gradient can vanish numerically before theta
    // grows past the raw threshold.
    if (1..p).any(|j| theta[j].abs() * design.column_sd(j) > STANDARDIZED_THRESHOLD) {
        return Err(Error::Separation {
            iterations,
            max_abs_theta: theta.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        });
    }
    let scores = design.scores(&theta);
    Ok(PropensityFit {
        scores,
        theta,
        fisher_info: state.info,
        converged,
        iterations,
        log_likelihood: state.loglik,
        formula: design.formula.clone(),
    })
}

/// Fit the propensity model on the dataset's own treatments.
pub fn fit_logistic(ds: &Dataset, formula: &PsFormula) -> Result<PropensityFit> {
    let design = DesignMatrix::build(ds, formula)?;
    fit_design(&design, &ds.treatments())
}

/// Fit with the treatment column replaced by `w_star`.
pub fn refit_on_bootstrap_treatments(
    ds: &Dataset,
    formula: &PsFormula,
    w_star: &[bool],
) -> Result<PropensityFit> {
    let design = DesignMatrix::build(ds, formula)?;
    fit_design(&design, w_star)
}

/// Per-subject log-likelihood gradient
/// `x_i e'(x_i' theta) (w_i - e_i) / (e_i (1 - e_i))`, which reduces to
/// `x_i (w_i - e_i)` for the logistic link.
pub fn score_gradient(fit: &PropensityFit, subject: &Subject) -> Result<Vec<f64>> {
    let row = fit.formula.design_row(&subject.x)?;
    let e = logistic(dot(&row, &fit.theta));
    let density = e * (1.0 - e);
    let resid = f64::from(subject.arm()) - e;
    Ok(row
        .iter()
        .map(|v| v * density * resid / (e * (1.0 - e)))
        .collect())
}
