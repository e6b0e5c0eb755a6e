//! Local-linear kernel regression on the propensity score.
//!
//! Gaussian kernel, rule-of-thumb bandwidth `1.06 sd n^{-1/5}`. Queries
//! outside the range of the data are clamped to it instead of extrapolated.
//! Curves used repeatedly are tabulated on a uniform grid and read back by
//! linear interpolation.

use crate::error::{Error, Result};

/// Fewest subjects per arm that a conditional-moment smoother accepts.
pub const MIN_ARM_SIZE: usize = 10;
pub const SIGMA2_FLOOR: f64 = 1e-12;
pub const GRID_POINTS: usize = 401;

/// `1.06 sd(x) n^{-1/5}`; falls back to 1 for constant `x`.
pub fn rule_of_thumb_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinear {
    x: Vec<f64>,
    y: Vec<f64>,
    bandwidth: f64,
    range: (f64, f64),
    linear: bool,
}

impl LocalLinear {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let h = rule_of_thumb_bandwidth(&x);
        Self::with_bandwidth(x, y, h)
    }

    pub fn with_bandwidth(x: Vec<f64>, y: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Invalid("smoother needs equal, non-empty inputs".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(LocalLinear {
            x,
            y,
            bandwidth,
            range: (lo, hi),
            linear: true,
        })
    }

    /// Nadaraya-Watson fit with the same kernel; stays within the range of `y`.
    pub fn local_constant(x: Vec<f64>, y: Vec<f64>, bandwidth: f64) -> Result<Self> {
        let mut s = Self::with_bandwidth(x, y, bandwidth)?;
        s.linear = false;
        Ok(s)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Fitted value at `p`; Nadaraya-Watson where the local design is singular.
    pub fn eval(&self, p: f64) -> f64 {
        let p = p.clamp(self.range.0, self.range.1);
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        // shift the exponent so the largest weight is 1
        let dmin = self
            .x
            .iter()
            .map(|&x| (x - p) * (x - p))
            .fold(f64::INFINITY, f64::min);
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let d = x - p;
            let k = (-(d * d - dmin) * inv).exp();
            s0 += k;
            s1 += k * d;
            s2 += k * d * d;
            t0 += k * y;
            t1 += k * d * y;
        }
        let det = s0 * s2 - s1 * s1;
        if self.linear && det > 1e-10 * s0 * s2 && det > 0.0 {
            (s2 * t0 - s1 * t1) / det
        } else {
            t0 / s0
        }
    }
}

/// A curve tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl Tabulated {
    pub fn from_fn(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> Self {
        let points = points.max(2);
        let step = if hi > lo { (hi - lo) / (points - 1) as f64 } else { 0.0 };
        let values = (0..points).map(|g| f(lo + g as f64 * step)).collect();
        Tabulated { lo, step, values }
    }

    pub fn eval(&self, p: f64) -> f64 {
        if self.step == 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        let pos = ((p - self.lo) / self.step).clamp(0.0, last as f64);
        let g = (pos.floor() as usize).min(last - 1);
        let frac = pos - g as f64;
        self.values[g] * (1.0 - frac) + self.values[g + 1] * frac
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tabulated {
            lo: self.lo,
            step: self.step,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Smoothing range shared by every curve of one analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub fn covering(scores: &[f64]) -> Self {
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Grid {
            lo,
            hi,
            points: GRID_POINTS,
        }
    }

    pub fn tabulate(&self, s: &LocalLinear) -> Tabulated {
        Tabulated::from_fn(self.lo, self.hi, self.points, |p| s.eval(p))
    }
}

/// `mu(arm, p)` and `sigma^2(arm, p)` of a response given the score.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    mu: [Tabulated; 2],
    sigma2: [Tabulated; 2],
    bandwidth: [f64; 2],
}

impl ConditionalMoments {
    pub fn mu(&self, arm: bool, p: f64) -> f64 {
        self.mu[usize::from(arm)].eval(p)
    }

    pub fn sigma2(&self, arm: bool, p: f64) -> f64 {
        self.sigma2[usize::from(arm)].eval(p)
    }

    pub fn bandwidth(&self, arm: bool) -> f64 {
        self.bandwidth[usize::from(arm)]
    }
}

/// Scores and responses of one arm.
pub(crate) fn arm_slices(values: &[f64], scores: &[f64], w: &[bool], arm: bool) -> (Vec<f64>, Vec<f64>) {
    (0..w.len())
        .filter(|&i| w[i] == arm)
        .map(|i| (scores[i], values[i]))
        .unzip()
}

pub(crate) fn check_arm_sizes(w: &[bool]) -> Result<()> {
    for arm in [false, true] {
        let size = w.iter().filter(|&&t| t == arm).count();
        if size < MIN_ARM_SIZE {
            return Err(Error::ArmTooSmall {
                arm: u8::from(arm),
                size,
                required: MIN_ARM_SIZE,
            });
        }
    }
    Ok(())
}

/// Within-arm regression of `y` on the score. The variance is a local-constant
/// fit to squared centred residuals, floored at [`SIGMA2_FLOOR`].
pub fn smooth_conditional_moments(y: &[f64], scores: &[f64], w: &[bool]) -> Result<ConditionalMoments> {
    if y.len() != scores.len() || w.len() != scores.len() {
        return Err(Error::Invalid("smoothing inputs differ in length".into()));
    }
    check_arm_sizes(w)?;
    let grid = Grid::covering(scores);
    let fit = |arm: bool| -> Result<(Tabulated, Tabulated, f64)> {
        let (x, v) = arm_slices(y, scores, w, arm);
        let mean = LocalLinear::new(x.clone(), v.clone())?;
        let h = mean.bandwidth();
        let sq: Vec<f64> = x.iter().zip(&v).map(|(&p, &yi)| (yi - mean.eval(p)).powi(2)).collect();
        let var = LocalLinear::local_constant(x, sq, h)?;
        let var_tab = grid.tabulate(&var).map(|s| s.max(SIGMA2_FLOOR));
        Ok((grid.tabulate(&mean), var_tab, h))
    };
    let (mu0, s0, h0) = fit(false)?;
    let (mu1, s1, h1) = fit(true)?;
    Ok(ConditionalMoments {
        mu: [mu0, mu1],
        sigma2: [s0, s1],
        bandwidth: [h0, h1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(n: usize, seed: u64, noise: f64, m: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let mut rng = Stream::root(seed).rng();
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut scores = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let p: f64 = 0.05 + 0.9 * rng.random::<f64>();
            scores.push(p);
            let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            y.push(m(p) + e);
            w.push(i % 2 == 0);
        }
        (y, scores, w)
    }

    #[test]
    fn constant_response() {
        let (y, s, w) = synthetic(100, 1, 0.0, |_| 2.5);
        let cm = smooth_conditional_moments(&y, &s, &w).unwrap();
        for p in [0.1, 0.4, 0.77] {
            for arm in [false, true] {
                assert!((cm.mu(arm, p) - 2.5).abs() < 1e-10);
                assert!(cm.sigma2(arm, p) <= SIGMA2_FLOOR * 1.000_001);
            }
        }
    }

    #[test]
    fn linear_response_is_reproduced() {
        let (y, s, w) = synthetic(500, 2, 0.0, |p| 1.0 - 3.0 * p);
        let cm = smooth_conditional_moments(&y, &s, &w).unwrap();
        let mut worst: f64 = 0.0;
        for g in 0..=100 {
            let p = 0.14 + 0.72 * g as f64 / 100.0;
            for arm in [false, true] {
                worst = worst.max((cm.mu(arm, p) - (1.0 - 3.0 * p)).abs());
            }
        }
        assert!(worst <= 0.02, "{worst}");
    }

    #[test]
    fn error_shrinks_with_n() {
        let m = |p: f64| (6.0 * p).sin();
        let ise = |n: usize| {
            let mut total = 0.0;
            for rep in 0..5 {
                let (y, s, w) = synthetic(n, 100 + rep, 0.5, m);
                let cm = smooth_conditional_moments(&y, &s, &w).unwrap();
                total += (0..200)
                    .map(|g| {
                        let p = 0.1 + 0.8 * g as f64 / 199.0;
                        (cm.mu(true, p) - m(p)).powi(2)
                    })
                    .sum::<f64>()
                    / 200.0;
            }
            total
        };
        assert!(ise(2000) < ise(200));
    }

    #[test]
    fn small_arm_is_rejected() {
        let s: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let w: Vec<bool> = (0..30).map(|i| i < 5).collect();
        let err = smooth_conditional_moments(&vec![0.0; 30], &s, &w).unwrap_err();
        assert!(matches!(err, Error::ArmTooSmall { arm: 1, size: 5, .. }));
    }

    #[test]
    fn tabulation_interpolates_and_clamps() {
        let t = Tabulated::from_fn(0.0, 1.0, 11, |p| 2.0 * p);
        assert!((t.eval(0.55) - 1.1).abs() < 1e-12);
        assert_eq!(t.eval(-3.0), 0.0);
        assert!((t.eval(7.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn far_query_is_clamped_to_data() {
        let s = LocalLinear::with_bandwidth(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0], 0.05).unwrap();
        assert!((s.eval(0.9) - s.eval(0.3)).abs() < 1e-12);
        assert!((s.eval(-4.0) - s.eval(0.1)).abs() < 1e-12);
        let c = LocalLinear::local_constant(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0], 0.5).unwrap();
        for p in [0.0, 0.15, 0.3, 1.0] {
            assert!((1.0..=3.0).contains(&c.eval(p)));
        }
    }
}
