//! Plug-in asymptotic variance of the matching estimator.
//!
//! `V_S = sum_w E[sigma^2(w, e) {3 / (2 p(w|X)) - p(w|X) / 2}] + E[{mu(0, e) + mu(1, e)}^2]`.
//! The weight `3 / (2 p) - p / 2` is the limit of `E[1{W = w} (1 + K)^2 | e]`,
//! so the estimate averages `sigma^2(W_i, e_i) (1 + k_i)^2` with the realised
//! match counts; the literal plug-in diverges when `E[1 / e]` is infinite and
//! is kept as a diagnostic. With an estimated score the variance of the
//! score drops by `c' I^{-1} c`, where
//! `c = E[{cov(X, mu(1, e) | e) / e + cov(X, mu(0, e) | e) / (1 - e)} e (1 - e)]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::residuals::HResiduals;
use super::smooth::{arm_slices, Grid, LocalLinear, Tabulated};
use super::PsmFit;
use crate::coxph::invert_spd;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::propensity::PropensityFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticComponents {
    pub v_s: f64,
    /// `V_S` with `p(w|X)` plugged into the limiting weights.
    pub v_s_formula: f64,
    /// `n^{-1} dS/dbeta` at the estimate; negative.
    pub a: f64,
    /// Over the design columns, intercept first (always 0).
    pub c: Vec<f64>,
    /// `c' I^{-1} c` with `I` the per-observation Fisher information.
    pub info_correction: f64,
    /// Known-score variance of `n^{1/2}(beta_hat - beta_0)`.
    pub v1: f64,
    /// Estimated-score variance of `n^{1/2}(beta_hat - beta_0)`.
    pub v2: f64,
}

impl AsymptoticComponents {
    pub fn from_parts(v_s: f64, a: f64, c: Vec<f64>, info_correction: f64) -> Self {
        AsymptoticComponents {
            v1: v_s / (a * a),
            v2: (v_s - info_correction) / (a * a),
            v_s,
            v_s_formula: v_s,
            a,
            c,
            info_correction,
        }
    }
}

/// Empirical `V_S` with realised weights `(1 + k_i)`.
pub fn v_s_hat(res: &HResiduals, treated: &[bool], weights: &[f64]) -> f64 {
    let n = treated.len() as f64;
    let mut total = 0.0;
    for (i, &t) in treated.iter().enumerate() {
        let s2 = if t { res.sig1[i] } else { res.sig0[i] };
        total += s2 * weights[i] * weights[i] + res.r1[i] * res.r1[i];
    }
    total / n
}

/// Empirical `V_S` with the limiting weights evaluated at the scores.
pub fn v_s_formula(res: &HResiduals, scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    let mut total = 0.0;
    for (i, &e) in scores.iter().enumerate() {
        let q = 1.0 - e;
        total += res.sig1[i] * (1.5 / e - 0.5 * e) + res.sig0[i] * (1.5 / q - 0.5 * q);
        total += res.r1[i] * res.r1[i];
    }
    total / n
}

/// `c` over the design columns of the propensity model.
pub fn c_hat(ds: &Dataset, ps: &PropensityFit, h: &[f64]) -> Result<Vec<f64>> {
    let w = ds.treatments();
    let scores = &ps.scores;
    let rows: Vec<Vec<f64>> = ds
        .subjects()
        .iter()
        .map(|s| ps.formula.design_row(&s.x))
        .collect::<Result<_>>()?;
    let p = ps.theta.len();
    let grid = Grid::covering(scores);
    let n = ds.len() as f64;
    let mu: [Tabulated; 2] = [false, true].map(|arm| {
        let (x, y) = arm_slices(h, scores, &w, arm);
        grid.tabulate(&LocalLinear::new(x, y).expect("arm sizes checked upstream"))
    });
    let mut c = vec![0.0; p];
    for (j, cj) in c.iter_mut().enumerate().skip(1) {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let prod: Vec<f64> = col.iter().zip(h).map(|(a, b)| a * b).collect();
        // cov(X_j, H | e, arm) = m_{XH} - m_X mu_H within each arm
        let cov: Vec<Tabulated> = [false, true]
            .into_iter()
            .map(|arm| -> Result<Tabulated> {
                let (sx, vx) = arm_slices(&col, scores, &w, arm);
                let (sp, vp) = arm_slices(&prod, scores, &w, arm);
                let mx = LocalLinear::new(sx, vx)?;
                let mxh = LocalLinear::new(sp, vp)?;
                let m = &mu[usize::from(arm)];
                Ok(Tabulated::from_fn(grid.lo, grid.hi, grid.points, |e| {
                    mxh.eval(e) - mx.eval(e) * m.eval(e)
                }))
            })
            .collect::<Result<_>>()?;
        *cj = scores
            .iter()
            .map(|&e| (cov[1].eval(e) / e + cov[0].eval(e) / (1.0 - e)) * e * (1.0 - e))
            .sum::<f64>()
            / n;
    }
    Ok(c)
}

/// All components of the known- and estimated-score variances.
pub fn asymptotic_variance(
    ds: &Dataset,
    psm: &PsmFit,
    ps: &PropensityFit,
    res: &HResiduals,
) -> Result<AsymptoticComponents> {
    let n = ds.len() as f64;
    let v_s = v_s_hat(res, &ds.treatments(), &psm.weights);
    let a = -psm.cox.neg_hessian[0] / n;
    let c = c_hat(ds, ps, &res.h)?;
    let info = &ps.fisher_info / n;
    let inv = invert_spd(&info)?;
    let cv = DVector::from_column_slice(&c);
    let correction = (cv.transpose() * inv * &cv)[(0, 0)];
    let mut comps = AsymptoticComponents::from_parts(v_s, a, c, correction);
    comps.v_s_formula = v_s_formula(res, &ps.scores);
    if !(comps.v2 > 0.0) {
        return Err(Error::Invalid(format!(
            "estimated-score variance is not positive (V_S = {v_s:.4e}, correction = {correction:.4e})"
        )));
    }
    Ok(comps)
}

/// Wald interval `beta_hat -/+ z sqrt(V / n)`.
pub fn wald_interval(beta_hat: f64, variance_of_beta: f64, alpha: f64) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let half = z * variance_of_beta.sqrt();
    (beta_hat - half, beta_hat + half)
}
