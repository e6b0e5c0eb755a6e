//! Weighted Cox proportional-hazards fitting with Breslow ties.
//!
//! For subject weights `w_i` and covariates `z_i` the partial score is
//! `S(beta) = sum_i w_i Delta_i {z_i - zbar(beta, u_i)}` over events in
//! `[0, tau]`, where `zbar` is the weighted risk-set mean of `z` under
//! `exp(beta' z)`. All tied events share the same risk-set denominator.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::propensity::PropensityFit;

pub const MAX_NEWTON_STEPS: usize = 50;
pub const SCORE_TOLERANCE: f64 = 1e-9;
/// A coefficient this large on a bounded covariate means the partial
/// likelihood is increasing without bound.
pub const DIVERGENCE_THRESHOLD: f64 = 25.0;

/// Survival outcomes with a covariate design, prepared for repeated fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxData {
    p: usize,
    time: Vec<f64>,
    event: Vec<bool>,
    /// Row-major `n x p`.
    z: Vec<f64>,
    /// Subjects by decreasing time, ties by index.
    order: Vec<usize>,
    tau: f64,
}

impl CoxData {
    pub fn new(time: Vec<f64>, event: Vec<bool>, z: Vec<f64>, p: usize, tau: f64) -> Result<Self> {
        let n = time.len();
        if event.len() != n || z.len() != n * p || p == 0 {
            return Err(Error::Invalid("cox inputs differ in length".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("cox covariates must be finite".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        Ok(CoxData {
            p,
            time,
            event,
            z,
            order,
            tau,
        })
    }

    /// Treatment as the only covariate.
    pub fn treatment_only(ds: &Dataset) -> Result<Self> {
        let z = ds.subjects().iter().map(|s| f64::from(s.arm())).collect();
        CoxData::new(ds.times(), ds.events(), z, 1, ds.tau())
    }

    /// Treatment followed by the baseline covariates.
    pub fn treatment_and_covariates(ds: &Dataset) -> Result<Self> {
        let mut z = Vec::with_capacity(ds.len() * (ds.dim() + 1));
        for s in ds.subjects() {
            z.push(f64::from(s.arm()));
            z.extend(&s.x);
        }
        CoxData::new(ds.times(), ds.events(), z, ds.dim() + 1, ds.tau())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.z(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    fn check(&self, weights: &[f64], beta: &[f64]) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::Invalid("weights differ in length from the data".into()));
        }
        if beta.len() != self.p {
            return Err(Error::Invalid(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.p
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Invalid("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Weighted risk-set sums at each distinct event time in `[0, tau]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskProfile {
    /// Ascending.
    pub times: Vec<f64>,
    /// `sum_j w_j exp(beta' z_j) Y_j(t)`.
    pub s0: Vec<f64>,
    /// Risk-set means `zbar(t) = S1(t) / S0(t)`, `p` entries per time.
    pub means: Vec<f64>,
    /// Weighted event count `sum_i w_i dN_i(t)`.
    pub events: Vec<f64>,
    pub p: usize,
}

impl RiskProfile {
    /// Weighted risk-set mean of `z` at the `k`-th event time.
    pub fn zbar(&self, k: usize) -> &[f64] {
        &self.means[k * self.p..(k + 1) * self.p]
    }
}

struct Evaluation {
    loglik: f64,
    score: Vec<f64>,
    /// Row-major `p x p` negative Hessian.
    info: Vec<f64>,
}

fn sweep(data: &CoxData, weights: &[f64], beta: &[f64], want_info: bool, mut profile: Option<&mut RiskProfile>) -> Result<Evaluation> {
    data.check(weights, beta)?;
    let p = data.p;
    let n = data.len();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; if want_info { p * p } else { 0 }];
    let mut eval = Evaluation {
        loglik: 0.0,
        score: vec![0.0; p],
        info: vec![0.0; if want_info { p * p } else { 0 }],
    };
    let mut any_event = false;
    let mut dwz = vec![0.0; p];
    let mut zbar = vec![0.0; p];
    let mut g = 0;
    while g < n {
        let t = data.time[data.order[g]];
        let mut h = g;
        while h < n && data.time[data.order[h]] == t {
            let i = data.order[h];
            let r = weights[i] * data.eta(i, beta).exp();
            let zi = data.z(i);
            s0 += r;
            for a in 0..p {
                s1[a] += r * zi[a];
                if want_info {
                    for b in 0..=a {
                        s2[a * p + b] += r * zi[a] * zi[b];
                    }
                }
            }
            h += 1;
        }
        if t <= data.tau {
            let mut dw = 0.0;
            dwz.iter_mut().for_each(|v| *v = 0.0);
            for &i in &data.order[g..h] {
                if data.event[i] && weights[i] > 0.0 {
                    dw += weights[i];
                    eval.loglik += weights[i] * data.eta(i, beta);
                    for (acc, zi) in dwz.iter_mut().zip(data.z(i)) {
                        *acc += weights[i] * zi;
                    }
                }
            }
            if dw > 0.0 {
                any_event = true;
                eval.loglik -= dw * s0.ln();
                for a in 0..p {
                    zbar[a] = s1[a] / s0;
                    eval.score[a] += dwz[a] - dw * zbar[a];
                }
                if want_info {
                    for a in 0..p {
                        for b in 0..=a {
                            eval.info[a * p + b] += dw * (s2[a * p + b] / s0 - zbar[a] * zbar[b]);
                        }
                    }
                }
                if let Some(prof) = profile.as_deref_mut() {
                    prof.times.push(t);
                    prof.s0.push(s0);
                    prof.means.extend(&zbar);
                    prof.events.push(dw);
                }
            }
        }
        g = h;
    }
    if !any_event {
        return Err(Error::NoEvents);
    }
    if want_info {
        for a in 0..p {
            for b in 0..a {
                eval.info[b * p + a] = eval.info[a * p + b];
            }
        }
    }
    Ok(eval)
}

/// Risk-set sums at every event time, ascending.
pub fn risk_profile(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<RiskProfile> {
    let mut prof = RiskProfile {
        times: Vec::new(),
        s0: Vec::new(),
        means: Vec::new(),
        events: Vec::new(),
        p: data.p,
    };
    sweep(data, weights, beta, false, Some(&mut prof))?;
    // the sweep runs backwards in time
    prof.times.reverse();
    prof.s0.reverse();
    prof.events.reverse();
    let p = data.p;
    let k = prof.times.len();
    let mut means = Vec::with_capacity(k * p);
    for idx in (0..k).rev() {
        means.extend_from_slice(&prof.means[idx * p..(idx + 1) * p]);
    }
    prof.means = means;
    Ok(prof)
}

/// Weighted partial score `S(beta)`.
pub fn partial_score(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    Ok(sweep(data, weights, beta, false, None)?.score)
}

/// Weighted Breslow log partial likelihood.
pub fn log_partial_likelihood(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<f64> {
    Ok(sweep(data, weights, beta, false, None)?.loglik)
}

/// Observed information `-dS/dbeta = sum_t dW(t) V(beta, t)`.
pub fn information(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<DMatrix<f64>> {
    let e = sweep(data, weights, beta, true, None)?;
    Ok(DMatrix::from_row_slice(data.p, data.p, &e.info))
}

/// Breslow cumulative baseline hazard as a step function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    /// Ascending event times.
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
}

impl Baseline {
    /// `Lambda_0(t)`: sum of increments at times `<= t`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        self.increments[..k].iter().sum()
    }
}

/// `dLambda_0(t) = sum_i w_i dN_i(t) / sum_j w_j exp(beta' z_j) Y_j(t)`.
pub fn breslow_baseline(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<Baseline> {
    let prof = risk_profile(data, weights, beta)?;
    Ok(Baseline {
        increments: prof.events.iter().zip(&prof.s0).map(|(d, s)| d / s).collect(),
        times: prof.times,
    })
}

/// Solution of the weighted partial score equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub baseline: Baseline,
    pub score_at_solution: Vec<f64>,
    /// Row-major `p x p` observed information at `beta`.
    pub neg_hessian: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CoxFit {
    pub fn neg_hessian_matrix(&self) -> DMatrix<f64> {
        let p = self.beta.len();
        DMatrix::from_row_slice(p, p, &self.neg_hessian)
    }

    /// Model-based variance `I^{-1}`.
    pub fn model_variance(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.neg_hessian_matrix())
    }

    pub fn hazard_ratio(&self) -> f64 {
        self.beta[0].exp()
    }
}

pub(crate) fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularInformation)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// Newton-Raphson from `beta = 0` with step halving on the log partial
/// likelihood.
pub fn solve_beta(data: &CoxData, weights: &[f64]) -> Result<CoxFit> {
    let p = data.p;
    let mut beta = vec![0.0; p];
    let mut cur = sweep(data, weights, &beta, true, None)?;
    let mut iterations = 0;
    loop {
        if max_abs(&cur.score) <= SCORE_TOLERANCE {
            break;
        }
        if iterations == MAX_NEWTON_STEPS {
            return Err(Error::NonConvergence {
                what: "partial likelihood",
                iterations,
                residual: max_abs(&cur.score),
            });
        }
        iterations += 1;
        let info = DMatrix::from_row_slice(p, p, &cur.info);
        let step = match info.cholesky() {
            Some(c) => c.solve(&DVector::from_column_slice(&cur.score)),
            // information vanishes when the risk sets are pure in z
            None => return Err(Error::MonotoneLikelihood(max_abs(&beta))),
        };
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let e = sweep(data, weights, &cand, true, None)?;
            if e.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() {
                next = Some((cand, e));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, e)) = next else {
            return Err(Error::NonConvergence {
                what: "partial likelihood",
                iterations,
                residual: max_abs(&cur.score),
            });
        };
        beta = cand;
        cur = e;
        if max_abs(&beta) > DIVERGENCE_THRESHOLD {
            return Err(Error::MonotoneLikelihood(max_abs(&beta)));
        }
    }
    // A root reached by the score decaying like exp(-|beta|) has vanishing
    // information relative to the event mass: the likelihood is monotone.
    let event_mass: f64 = (0..data.len())
        .filter(|&i| data.event[i] && data.time[i] <= data.tau)
        .map(|i| weights[i])
        .sum();
    for a in 0..p {
        let zmax = (0..data.len()).fold(0.0f64, |m, i| m.max(data.z(i)[a].abs()));
        if cur.info[a * p + a] <= 1e-8 * event_mass * zmax * zmax {
            return Err(Error::MonotoneLikelihood(max_abs(&beta)));
        }
    }
    if DMatrix::from_row_slice(p, p, &cur.info).cholesky().is_none() {
        return Err(Error::SingularInformation);
    }
    Ok(CoxFit {
        baseline: breslow_baseline(data, weights, &beta)?,
        score_at_solution: cur.score,
        neg_hessian: cur.info,
        log_likelihood: cur.loglik,
        beta,
        converged: true,
        iterations,
    })
}

/// Per-subject score residuals
/// `r_i = Delta_i {z_i - zbar(u_i)} - exp(beta' z_i) sum_{t <= u_i} {z_i - zbar(t)} dLambda_0(t)`,
/// row-major `n x p`. They satisfy `r_i = dS/dw_i` and `sum_i w_i r_i = S(beta)`.
pub fn score_residuals(data: &CoxData, weights: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let prof = risk_profile(data, weights, beta)?;
    let p = data.p;
    let k = prof.times.len();
    // cumulative c0 = sum dLambda, c1 = sum dLambda * zbar over event times <= t
    let mut c0 = vec![0.0; k];
    let mut c1 = vec![0.0; k * p];
    let mut acc0 = 0.0;
    let mut acc1 = vec![0.0; p];
    for j in 0..k {
        let dl = prof.events[j] / prof.s0[j];
        acc0 += dl;
        for a in 0..p {
            acc1[a] += dl * prof.zbar(j)[a];
        }
        c0[j] = acc0;
        c1[j * p..(j + 1) * p].copy_from_slice(&acc1);
    }
    let mut out = vec![0.0; data.len() * p];
    for i in 0..data.len() {
        let u = data.time[i];
        let pos = prof.times.partition_point(|&t| t <= u);
        let zi = data.z(i);
        let r = &mut out[i * p..(i + 1) * p];
        if data.event[i] && u <= data.tau && pos > 0 && prof.times[pos - 1] == u {
            for a in 0..p {
                r[a] += zi[a] - prof.zbar(pos - 1)[a];
            }
        }
        if pos > 0 {
            let risk = data.eta(i, beta).exp();
            for a in 0..p {
                r[a] -= risk * (zi[a] * c0[pos - 1] - c1[(pos - 1) * p + a]);
            }
        }
    }
    Ok(out)
}

/// Lin-Wei sandwich `I^{-1} B I^{-1}` with `B = sum_i w_i^2 r_i r_i'`.
pub fn robust_variance(data: &CoxData, weights: &[f64], fit: &CoxFit) -> Result<DMatrix<f64>> {
    let p = data.p;
    let r = score_residuals(data, weights, &fit.beta)?;
    let mut b = DMatrix::<f64>::zeros(p, p);
    for i in 0..data.len() {
        let ri = &r[i * p..(i + 1) * p];
        let w2 = weights[i] * weights[i];
        for x in 0..p {
            for y in 0..p {
                b[(x, y)] += w2 * ri[x] * ri[y];
            }
        }
    }
    let inv = fit.model_variance()?;
    let v = &inv * b * &inv;
    Ok((&v + v.transpose()) * 0.5)
}

/// Inverse-probability-of-treatment weights `w / e + (1 - w) / (1 - e)`.
pub fn ipw_weights(fit: &PropensityFit, w: &[bool]) -> Vec<f64> {
    inverse_probability_weights(&fit.scores, w)
}

pub fn inverse_probability_weights(scores: &[f64], w: &[bool]) -> Vec<f64> {
    scores
        .iter()
        .zip(w)
        .map(|(&e, &t)| if t { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}
