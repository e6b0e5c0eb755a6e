//! Data generation with a known marginal hazard ratio.
//!
//! The conditional survival of arm `w`,
//! `S_w(t | x) = prod_k (1 - eta_k t / lambda_k) exp{(eta' x - lambda0 e^{beta0 w}) t}`,
//! integrates over `X_k ~ Exp(lambda_k)` to `exp(-lambda0 e^{beta0 w} t)`, so
//! the marginal hazard ratio is `e^{beta0}` while the covariates act on the
//! outcome. The control arm either follows the same law with `w = 0` or is
//! drawn directly from its marginal `Exp(lambda0)`.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::config::{ControlOutcome, ScenarioConfig};
use crate::dataset::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::propensity::{dot, logistic};
use crate::rng::{purpose, Stream};

/// Pilot sample size for censoring calibration.
pub const PILOT_DRAWS: usize = 10_000;
const ROOT_TOLERANCE: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;

/// `P(W = 1 | x)` under the generating model.
pub fn true_propensity(cfg: &ScenarioConfig, x: &[f64]) -> Result<f64> {
    let row = cfg.ps_spec.generating().design_row(x)?;
    Ok(logistic(-dot(&row, &cfg.theta)))
}

/// `log S_w(t | x)`.
pub fn log_survival(cfg: &ScenarioConfig, x: &[f64], t: f64, treated: bool) -> f64 {
    let poly: f64 = cfg
        .eta
        .iter()
        .zip(&cfg.lambda_cov)
        .map(|(e, l)| (-e * t / l).ln_1p())
        .sum();
    let rate = dot(&cfg.eta, x) - marginal_rate(cfg, treated);
    poly + rate * t
}

pub fn survival(cfg: &ScenarioConfig, x: &[f64], t: f64, treated: bool) -> f64 {
    log_survival(cfg, x, t, treated).exp()
}

/// `lambda0 e^{beta0 w}`.
pub fn marginal_rate(cfg: &ScenarioConfig, treated: bool) -> f64 {
    if treated {
        cfg.lambda0 * cfg.beta0.exp()
    } else {
        cfg.lambda0
    }
}

/// Marginal survival of either arm: `exp(-lambda0 e^{beta0 w} t)`.
pub fn marginal_survival(cfg: &ScenarioConfig, treated: bool, t: f64) -> f64 {
    (-marginal_rate(cfg, treated) * t).exp()
}

/// Root of `S_w(t | x) = 1 - u` by bisection in log form on `[0, t_hi]`,
/// doubling `t_hi` until the sign changes.
pub fn solve_time(cfg: &ScenarioConfig, x: &[f64], u: f64, treated: bool) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Bracketing(format!("u = {u} outside (0, 1)")));
    }
    let target = (-u).ln_1p();
    let g = |t: f64| log_survival(cfg, x, t, treated) - target;
    let mut hi = 1.0;
    let mut doublings = 0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Bracketing(format!(
                "no sign change up to t = {hi} for x = {x:?}, u = {u}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Covariates, treatment and both potential event times of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub x: Vec<f64>,
    pub propensity: f64,
    pub treated: bool,
    pub t0: f64,
    pub t1: f64,
}

impl Draw {
    pub fn time(&self) -> f64 {
        if self.treated {
            self.t1
        } else {
            self.t0
        }
    }
}

pub fn draw_subject<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Draw> {
    let x = cfg
        .lambda_cov
        .iter()
        .map(|&l| Exp::new(l).map(|d| d.sample(rng)))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| Error::Config(e.to_string()))?;
    let propensity = true_propensity(cfg, &x)?;
    let treated = rng.random::<f64>() < propensity;
    let t0 = match cfg.control_outcome {
        ControlOutcome::Covariate => solve_time(cfg, &x, rng.sample(Open01), false)?,
        ControlOutcome::Exponential => Exp::new(cfg.lambda0)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng),
    };
    let t1 = solve_time(cfg, &x, rng.sample(Open01), true)?;
    Ok(Draw {
        x,
        propensity,
        treated,
        t0,
        t1,
    })
}

/// Expected censored fraction `P(C < T)` for `C ~ U(0, c)` given the event
/// times, `mean(min(T, c)) / c`.
pub fn censoring_fraction(times: &[f64], c: f64) -> f64 {
    times.iter().map(|&t| t.min(c)).sum::<f64>() / (times.len() as f64 * c)
}

/// Bisect `c` so the censored fraction of `times` hits the middle of
/// `target`, then accept when it lies in the inner 60% of `target`.
pub fn calibrate_to_times(times: &[f64], target: [f64; 2]) -> Result<f64> {
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Calibration("pilot times must be positive and finite".into()));
    }
    let [lo_t, hi_t] = target;
    let margin = 0.2 * (hi_t - lo_t);
    let (accept_lo, accept_hi) = (lo_t + margin, hi_t - margin);
    let goal = 0.5 * (lo_t + hi_t);
    // the fraction falls from 1 at c -> 0 to 0 at c -> infinity
    let mut lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = times.iter().copied().fold(0.0, f64::max);
    while censoring_fraction(times, lo) < goal {
        lo /= 2.0;
    }
    while censoring_fraction(times, hi) > goal {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Calibration("upper bracket diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censoring_fraction(times, mid) > goal {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let frac = censoring_fraction(times, c);
    if !(accept_lo..=accept_hi).contains(&frac) {
        return Err(Error::Calibration(format!(
            "fraction {frac} at c_max = {c} outside [{accept_lo}, {accept_hi}]"
        )));
    }
    Ok(c)
}

/// Uniform censoring bound for the scenario, from [`PILOT_DRAWS`] pilot
/// subjects on the given stream.
pub fn calibrate_censoring(cfg: &ScenarioConfig, stream: Stream) -> Result<f64> {
    let mut rng = stream.child(purpose::CALIBRATION).rng();
    let times = (0..PILOT_DRAWS)
        .map(|_| draw_subject(cfg, &mut rng).map(|d| d.time()))
        .collect::<Result<Vec<f64>>>()?;
    calibrate_to_times(&times, cfg.censor_target)
}

/// One simulated dataset together with what only a simulation knows.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: Dataset,
    pub true_scores: Vec<f64>,
    pub t0: Vec<f64>,
    pub t1: Vec<f64>,
    pub censored_fraction: f64,
}

pub fn generate_replicate<R: Rng + ?Sized>(cfg: &ScenarioConfig, c_max: f64, rng: &mut R) -> Result<Replicate> {
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut true_scores = Vec::with_capacity(cfg.n);
    let mut t0 = Vec::with_capacity(cfg.n);
    let mut t1 = Vec::with_capacity(cfg.n);
    let mut censored = 0usize;
    for id in 0..cfg.n {
        let d = draw_subject(cfg, rng)?;
        let c = c_max * rng.random::<f64>();
        let t = d.time();
        let event = t <= c;
        censored += usize::from(!event);
        subjects.push(Subject {
            id,
            x: d.x,
            treated: d.treated,
            time: t.min(c),
            event,
        });
        true_scores.push(d.propensity);
        t0.push(d.t0);
        t1.push(d.t1);
    }
    let names = (1..=cfg.lambda_cov.len()).map(|k| format!("x{k}")).collect();
    Ok(Replicate {
        data: Dataset::with_names(subjects, names)?,
        true_scores,
        t0,
        t1,
        censored_fraction: censored as f64 / cfg.n as f64,
    })
}
