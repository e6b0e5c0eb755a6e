//! Double resampling: resample the treatment labels from the fitted score
//! model (so the propensity fit is repeated) and perturb the martingale
//! residuals with two-point multipliers.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::residuals::HResiduals;
use super::smooth::ConditionalMoments;
use super::{quantile, sample_variance};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matching::{impute_k, match_on_covariates, KImputation, MatchResult};
use crate::propensity::{fit_design, DesignMatrix, PropensityFit};
use crate::rng::{purpose, Stream, StreamRng};

/// Draws per replicate before the whole procedure gives up.
pub const MAX_ATTEMPTS: usize = 10;

const SQRT5: f64 = 2.236_067_977_499_79;
/// Low support point `-(sqrt 5 - 1) / 2`.
pub const MULTIPLIER_LOW: f64 = -(SQRT5 - 1.0) / 2.0;
/// High support point `(sqrt 5 + 1) / 2`.
pub const MULTIPLIER_HIGH: f64 = (SQRT5 + 1.0) / 2.0;
/// `P(u = low) = (sqrt 5 + 1) / (2 sqrt 5)`.
pub const MULTIPLIER_P_LOW: f64 = (SQRT5 + 1.0) / (2.0 * SQRT5);

/// Mean-zero, unit-variance two-point multiplier.
pub fn two_point_multiplier<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<f64>() < MULTIPLIER_P_LOW {
        MULTIPLIER_LOW
    } else {
        MULTIPLIER_HIGH
    }
}

/// Inputs fixed across replicates.
#[derive(Debug, Clone)]
pub struct ResamplingSetup<'a> {
    pub design: DesignMatrix,
    pub scores: &'a [f64],
    pub treated: Vec<bool>,
    /// Covariate-space matches supplying opposite-arm residuals.
    pub secondary: MatchResult,
    pub k: KImputation,
    pub h: &'a [f64],
    pub moments: &'a ConditionalMoments,
}

impl<'a> ResamplingSetup<'a> {
    pub fn new(
        ds: &Dataset,
        ps: &'a PropensityFit,
        primary: &MatchResult,
        res: &'a HResiduals,
        moments: &'a ConditionalMoments,
        stream: Stream,
    ) -> Result<Self> {
        let treated = ds.treatments();
        let secondary = match_on_covariates(ds)?;
        let mut rng = stream.child(purpose::K_IMPUTATION).rng();
        let k = impute_k(primary, &ps.scores, &treated, &mut rng)?;
        Ok(ResamplingSetup {
            design: DesignMatrix::build(ds, &ps.formula)?,
            scores: &ps.scores,
            treated,
            secondary,
            k,
            h: &res.h,
            moments,
        })
    }

    /// Source subject of the arm-`arm` residual of subject `i`.
    fn source(&self, i: usize, arm: bool) -> usize {
        if self.treated[i] == arm {
            i
        } else {
            self.secondary.match_index[i]
        }
    }

    /// `r2_i(arm)` evaluated at the replicate scores.
    fn r2(&self, i: usize, arm: bool, e_star: &[f64]) -> f64 {
        let m = self.source(i, arm);
        self.h[m] - self.moments.mu(arm, e_star[m])
    }

    /// `S*` given the replicate scores, treatments and multipliers.
    pub fn statistic(&self, e_star: &[f64], w_star: &[bool], u: &[f64]) -> f64 {
        let n = e_star.len();
        let mut r_star = Vec::with_capacity(n);
        let mut centre = 0.0;
        for i in 0..n {
            let e = e_star[i];
            let r1 = self.moments.mu(false, e) + self.moments.mu(true, e);
            let r20 = self.r2(i, false, e_star);
            let r21 = self.r2(i, true, e_star);
            let k0 = 1.0 + self.k.k0[i] as f64;
            let k1 = 1.0 + self.k.k1[i] as f64;
            let (kw, rw) = if w_star[i] { (k1, r21) } else { (k0, r20) };
            r_star.push(r1 + kw * rw);
            centre += r1 + e * k1 * r21 + (1.0 - e) * k0 * r20;
        }
        centre /= n as f64;
        r_star.iter().zip(u).map(|(r, ui)| (r - centre) * ui).sum()
    }

    fn replicate(&self, b: usize, stream: Stream) -> Result<(f64, usize)> {
        let mut rng: StreamRng = stream.child(b as u64).rng();
        let n = self.scores.len();
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            let w_star: Vec<bool> = self.scores.iter().map(|&e| rng.random::<f64>() < e).collect();
            match fit_design(&self.design, &w_star) {
                Ok(fit) => {
                    let u: Vec<f64> = (0..n).map(|_| two_point_multiplier(&mut rng)).collect();
                    return Ok((self.statistic(&fit.scores, &w_star, &u), attempt));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::ReplicateExhausted {
            replicate: b,
            attempts: MAX_ATTEMPTS,
            last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResamplingOutcome {
    pub ci: (f64, f64),
    /// `var(S*) / I^2`, the implied variance of `beta_hat`.
    pub variance: f64,
    pub draws: Vec<f64>,
    /// Replicate draws rejected and redrawn.
    pub redraws: usize,
}

/// Map percentiles of `S*` to an interval for `beta` through the linearisation
/// `beta - beta_hat ~ S / I`, where `I = -dS/dbeta` at `beta_hat`.
pub fn interval_from_draws(beta_hat: f64, information: f64, draws: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile(&sorted, alpha / 2.0);
    let hi = quantile(&sorted, 1.0 - alpha / 2.0);
    let a = beta_hat - lo / information;
    let b = beta_hat - hi / information;
    (a.min(b), a.max(b))
}

/// `B` replicates in parallel; each has its own stream, so the result does
/// not depend on the thread count.
pub fn double_resampling(
    setup: &ResamplingSetup<'_>,
    beta_hat: f64,
    information: f64,
    b: usize,
    alpha: f64,
    stream: Stream,
) -> Result<ResamplingOutcome> {
    let stream = stream.child(purpose::DOUBLE_RESAMPLING);
    let results: Vec<(f64, usize)> = (0..b)
        .into_par_iter()
        .map(|r| setup.replicate(r, stream))
        .collect::<Result<_>>()?;
    let draws: Vec<f64> = results.iter().map(|r| r.0).collect();
    Ok(ResamplingOutcome {
        ci: interval_from_draws(beta_hat, information, &draws, alpha),
        variance: sample_variance(&draws) / (information * information),
        redraws: results.iter().map(|r| r.1).sum(),
        draws,
    })
}
