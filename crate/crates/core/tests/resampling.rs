mod common;

use hazmatch::dataset::{Dataset, Subject};
use hazmatch::inference::double_resampling::ResamplingSetup;
use hazmatch::inference::naive_bootstrap::naive_bootstrap;
use hazmatch::inference::{
    double_resampling, fit_psm, h_residuals, martingale_residuals, smooth_conditional_moments,
};
use hazmatch::matching::match_on_covariates;
use hazmatch::propensity::{fit_logistic, PsFormula};
use hazmatch::rng::Stream;
use hazmatch::simulation::Confounding;
use rand::Rng;

/// Random covariates and treatments; every subject has an event at `t = 1`.
fn tied_times(n: usize, seed: u64) -> Dataset {
    let mut rng = Stream::root(seed).rng();
    let subjects = (0..n)
        .map(|i| {
            let x: f64 = rng.random_range(-1.0..1.0);
            Subject {
                id: i,
                treated: rng.random::<f64>() < 0.3 + 0.4 * (x + 1.0) / 2.0,
                x: vec![x],
                time: 1.0,
                event: true,
            }
        })
        .collect();
    Dataset::new(subjects).unwrap()
}

#[test]
fn naive_bootstrap_is_degenerate_when_all_times_tie() {
    // one shared event time: every resample solves W1 W0 = W0 W1 exp(beta)
    let ds = tied_times(80, 1);
    let out = naive_bootstrap(&ds, &PsFormula::Identity, 100, 0.05, Stream::root(2)).unwrap();
    assert!(out.draws.iter().all(|b| b.abs() < 1e-10));
    assert!(out.ci.0.abs() < 1e-10 && out.ci.1.abs() < 1e-10, "{:?}", out.ci);
    assert!(out.variance < 1e-20);
}

#[test]
fn double_resampling_vanishes_with_constant_residual_means() {
    // H constant within each arm: mu is constant, r2 = 0 and r1 = c0 + c1,
    // so after centring every S* is exactly sum (r1 - r1) u_i = 0
    let rep = common::replicate(200, Confounding::Weak, 3);
    let ds = &rep.data;
    let ps = fit_logistic(ds, &PsFormula::Identity).unwrap();
    let psm = fit_psm(ds, &ps.scores).unwrap();
    let w = ds.treatments();
    let h: Vec<f64> = w.iter().map(|&t| if t { 0.7 } else { -0.2 }).collect();
    let moments = smooth_conditional_moments(&h, &ps.scores, &w).unwrap();
    let secondary = match_on_covariates(ds).unwrap();
    let res = martingale_residuals(&h, &ps.scores, &w, &moments, &secondary).unwrap();
    assert!(res.r2_own.iter().chain(&res.r2_opposite).all(|r| r.abs() < 1e-10));
    let stream = Stream::root(4);
    let setup = ResamplingSetup::new(ds, &ps, &psm.matches, &res, &moments, stream).unwrap();
    let beta = psm.cox.beta[0];
    let out = double_resampling(&setup, beta, psm.cox.neg_hessian[0], 100, 0.05, stream).unwrap();
    assert!(out.draws.iter().all(|s| s.abs() < 1e-9));
    assert!((out.ci.0 - beta).abs() < 1e-9 && (out.ci.1 - beta).abs() < 1e-9);
}

#[test]
fn statistic_is_linear_in_the_multipliers() {
    let rep = common::replicate(150, Confounding::Weak, 5);
    let ds = &rep.data;
    let ps = fit_logistic(ds, &PsFormula::Identity).unwrap();
    let psm = fit_psm(ds, &ps.scores).unwrap();
    let w = ds.treatments();
    let h = h_residuals(&psm).unwrap();
    let moments = smooth_conditional_moments(&h, &ps.scores, &w).unwrap();
    let secondary = match_on_covariates(ds).unwrap();
    let res = martingale_residuals(&h, &ps.scores, &w, &moments, &secondary).unwrap();
    let setup = ResamplingSetup::new(ds, &ps, &psm.matches, &res, &moments, Stream::root(6)).unwrap();
    let mut rng = Stream::root(7).rng();
    let u: Vec<f64> = (0..ds.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..ds.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
    let s = |m: &[f64]| setup.statistic(&ps.scores, &w, m);
    assert!((s(&uv) - (2.0 * s(&u) - 3.0 * s(&v))).abs() < 1e-10);
    assert!(s(&vec![0.0; ds.len()]) == 0.0);
}

fn endpoints_stable(b_small: (f64, f64), b_large: (f64, f64)) {
    let width = b_large.1 - b_large.0;
    assert!(width > 0.0);
    assert!((b_small.0 - b_large.0).abs() <= 0.15 * width, "{b_small:?} vs {b_large:?}");
    assert!((b_small.1 - b_large.1).abs() <= 0.15 * width, "{b_small:?} vs {b_large:?}");
}

#[test]
fn naive_bootstrap_is_stable_in_b() {
    let rep = common::replicate(300, Confounding::Weak, 8);
    let f = PsFormula::Identity;
    let small = naive_bootstrap(&rep.data, &f, 200, 0.05, Stream::root(9)).unwrap();
    let large = naive_bootstrap(&rep.data, &f, 2000, 0.05, Stream::root(9)).unwrap();
    endpoints_stable(small.ci, large.ci);
}

#[test]
fn double_resampling_is_stable_in_b() {
    let rep = common::replicate(300, Confounding::Weak, 10);
    let ds = &rep.data;
    let ps = fit_logistic(ds, &PsFormula::Identity).unwrap();
    let psm = fit_psm(ds, &ps.scores).unwrap();
    let w = ds.treatments();
    let h = h_residuals(&psm).unwrap();
    let moments = smooth_conditional_moments(&h, &ps.scores, &w).unwrap();
    let secondary = match_on_covariates(ds).unwrap();
    let res = martingale_residuals(&h, &ps.scores, &w, &moments, &secondary).unwrap();
    let stream = Stream::root(11);
    let setup = ResamplingSetup::new(ds, &ps, &psm.matches, &res, &moments, stream).unwrap();
    let (beta, info) = (psm.cox.beta[0], psm.cox.neg_hessian[0]);
    let small = double_resampling(&setup, beta, info, 200, 0.05, stream).unwrap();
    let large = double_resampling(&setup, beta, info, 2000, 0.05, stream).unwrap();
    endpoints_stable(small.ci, large.ci);
}
