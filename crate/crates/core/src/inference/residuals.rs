//! Subject-level residuals `H_i` of the matching estimating equation and
//! the martingale residuals used for resampling.

use serde::Serialize;

use super::smooth::ConditionalMoments;
use super::PsmFit;
use crate::coxph::score_residuals;
use crate::error::{Error, Result};
use crate::matching::MatchResult;

/// `H_i(W_i) = int {W_i - Qhat(t)} {dN_i(t) - exp(beta W_i) Y_i(t) dLambda_0(t)}`
/// at the fitted `beta` with the Breslow baseline. `sum_i (1 + k_i) H_i`
/// equals the partial score, hence vanishes at the root.
pub fn h_residuals(psm: &PsmFit) -> Result<Vec<f64>> {
    score_residuals(&psm.cox_data, &psm.weights, &psm.cox.beta)
}

/// Residuals and smoothed moments evaluated at each subject's score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HResiduals {
    pub h: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sig0: Vec<f64>,
    pub sig1: Vec<f64>,
    /// `mu(0, e_i) + mu(1, e_i)`.
    pub r1: Vec<f64>,
    /// `H_i - mu(W_i, e_i)`.
    pub r2_own: Vec<f64>,
    /// `H_m - mu(1 - W_i, e_m)` with `m` the covariate-space match of `i`.
    pub r2_opposite: Vec<f64>,
}

pub fn martingale_residuals(
    h: &[f64],
    scores: &[f64],
    w: &[bool],
    moments: &ConditionalMoments,
    secondary: &MatchResult,
) -> Result<HResiduals> {
    let n = h.len();
    if scores.len() != n || w.len() != n || secondary.len() != n {
        return Err(Error::Invalid("residual inputs differ in length".into()));
    }
    let mu0: Vec<f64> = scores.iter().map(|&e| moments.mu(false, e)).collect();
    let mu1: Vec<f64> = scores.iter().map(|&e| moments.mu(true, e)).collect();
    let sig0 = scores.iter().map(|&e| moments.sigma2(false, e)).collect();
    let sig1 = scores.iter().map(|&e| moments.sigma2(true, e)).collect();
    let r1 = mu0.iter().zip(&mu1).map(|(a, b)| a + b).collect();
    let mu_at = |i: usize, arm: bool| if arm { mu1[i] } else { mu0[i] };
    let r2_own = (0..n).map(|i| h[i] - mu_at(i, w[i])).collect();
    let r2_opposite = (0..n)
        .map(|i| {
            let m = secondary.match_index[i];
            h[m] - mu_at(m, !w[i])
        })
        .collect();
    Ok(HResiduals {
        h: h.to_vec(),
        mu0,
        mu1,
        sig0,
        sig1,
        r1,
        r2_own,
        r2_opposite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Subject};
    use crate::inference::fit_psm;

    fn subject(id: usize, x: f64, treated: bool, time: f64, event: bool) -> Subject {
        Subject {
            id,
            x: vec![x],
            treated,
            time,
            event,
        }
    }

    #[test]
    fn five_subject_hand_values() {
        // scores chosen so matching is easy to follow
        let ds = Dataset::new(vec![
            subject(0, 0.0, true, 2.0, true),
            subject(1, 0.0, false, 1.0, true),
            subject(2, 0.0, true, 3.0, false),
            subject(3, 0.0, false, 4.0, true),
            subject(4, 0.0, false, 0.5, false),
        ])
        .unwrap();
        let scores = [0.30, 0.32, 0.60, 0.58, 0.10];
        let psm = fit_psm(&ds, &scores).unwrap();
        // matches: 0->1, 1->0, 2->3, 3->2, 4->0
        assert_eq!(psm.matches.match_index, vec![1, 0, 3, 2, 0]);
        let wt = [3.0, 2.0, 2.0, 2.0, 1.0];
        assert_eq!(psm.weights, wt);
        let b = psm.cox.beta[0];
        let e = b.exp();
        // risk sets at the event times 1, 2, 4 (subject 4 leaves at 0.5)
        let s0 = |t: f64| -> f64 {
            let rows = [(2.0, 1.0, 3.0), (1.0, 0.0, 2.0), (3.0, 1.0, 2.0), (4.0, 0.0, 2.0)];
            rows.iter().filter(|r| r.0 >= t).map(|r| r.2 * (b * r.1).exp()).sum()
        };
        let s1 = |t: f64| -> f64 {
            let rows = [(2.0, 1.0, 3.0), (3.0, 1.0, 2.0)];
            rows.iter().filter(|r| r.0 >= t).map(|r| r.2 * e).sum()
        };
        let q = |t: f64| s1(t) / s0(t);
        let dl = |t: f64, dw: f64| dw / s0(t);
        let (d1, d2, d4) = (dl(1.0, 2.0), dl(2.0, 3.0), dl(4.0, 2.0));
        let expected = [
            (1.0 - q(2.0)) - e * ((1.0 - q(1.0)) * d1 + (1.0 - q(2.0)) * d2),
            (0.0 - q(1.0)) - (0.0 - q(1.0)) * d1,
            -e * ((1.0 - q(1.0)) * d1 + (1.0 - q(2.0)) * d2),
            (0.0 - q(4.0)) - ((0.0 - q(1.0)) * d1 + (0.0 - q(2.0)) * d2 + (0.0 - q(4.0)) * d4),
            0.0,
        ];
        let h = h_residuals(&psm).unwrap();
        for (a, b) in h.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // censored before the first event: no mass
        assert_eq!(h[4], 0.0);
        let total: f64 = h.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!(total.abs() <= 1e-8);
    }
}
