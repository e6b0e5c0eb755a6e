//! Nonparametric bootstrap of the whole pipeline: resample subjects, refit
//! the score model, rematch and re-solve. Known to be inconsistent for
//! matching with replacement; kept as a comparator.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_psm, quantile, sample_variance};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic, PsFormula};
use crate::rng::{purpose, Stream};

use super::double_resampling::MAX_ATTEMPTS;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapOutcome {
    pub ci: (f64, f64),
    pub variance: f64,
    pub draws: Vec<f64>,
    pub redraws: usize,
}

fn one_replicate(ds: &Dataset, formula: &PsFormula, idx: &[usize]) -> Result<f64> {
    let star = ds.select(idx)?;
    let ps = fit_logistic(&star, formula)?;
    Ok(fit_psm(&star, &ps.scores)?.cox.beta[0])
}

/// Percentile interval from `B` full-pipeline replicates.
pub fn naive_bootstrap(
    ds: &Dataset,
    formula: &PsFormula,
    b: usize,
    alpha: f64,
    stream: Stream,
) -> Result<BootstrapOutcome> {
    let stream = stream.child(purpose::NAIVE_BOOTSTRAP);
    let n = ds.len();
    let results: Vec<(f64, usize)> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r as u64).rng();
            let mut last = String::new();
            for attempt in 0..MAX_ATTEMPTS {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match one_replicate(ds, formula, &idx) {
                    Ok(beta) => return Ok((beta, attempt)),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(Error::ReplicateExhausted {
                replicate: r,
                attempts: MAX_ATTEMPTS,
                last,
            })
        })
        .collect::<Result<_>>()?;
    let draws: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapOutcome {
        ci: (quantile(&sorted, alpha / 2.0), quantile(&sorted, 1.0 - alpha / 2.0)),
        variance: sample_variance(&draws),
        redraws: results.iter().map(|r| r.1).sum(),
        draws,
    })
}
