//! Nearest-neighbour matching with replacement, one match per subject.
//!
//! Every subject is matched to its closest subject in the opposite arm; the
//! match supplies the missing potential outcome. A subject used `k` times as a
//! match carries weight `1 + k` in the weighted representation of the imputed
//! dataset. Distance ties go to the lowest index.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Match assignments and the weights they induce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    /// Nearest opposite-arm subject for each subject.
    pub match_index: Vec<usize>,
    /// Number of opposite-arm subjects matched to each subject.
    pub k: Vec<usize>,
}

impl MatchResult {
    fn from_matches(match_index: Vec<usize>) -> Self {
        let mut k = vec![0; match_index.len()];
        for &j in &match_index {
            k[j] += 1;
        }
        MatchResult { match_index, k }
    }

    pub fn len(&self) -> usize {
        self.match_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.match_index.is_empty()
    }

    /// `1 + k_i`.
    pub fn weights(&self) -> Vec<f64> {
        self.k.iter().map(|&k| 1.0 + k as f64).collect()
    }

    /// Index of the subject supplying arm `arm` for subject `i`.
    pub fn source(&self, i: usize, arm: bool, treated: &[bool]) -> usize {
        if treated[i] == arm {
            i
        } else {
            self.match_index[i]
        }
    }
}

fn check_arms(w: &[bool]) -> Result<()> {
    if !w.iter().any(|&v| !v) {
        return Err(Error::EmptyArm { arm: 0, hint: "" });
    }
    if !w.iter().any(|&v| v) {
        return Err(Error::EmptyArm { arm: 1, hint: "" });
    }
    Ok(())
}

/// Per-arm values sorted by `(value, index)` for binary search.
struct SortedArm {
    values: Vec<f64>,
    index: Vec<usize>,
}

impl SortedArm {
    fn new(values: &[f64], w: &[bool], arm: bool) -> Self {
        let mut idx: Vec<usize> = (0..values.len()).filter(|&i| w[i] == arm).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        SortedArm {
            values: idx.iter().map(|&i| values[i]).collect(),
            index: idx,
        }
    }

    /// Lowest-index member minimising `|value - v|`.
    fn nearest(&self, v: f64) -> usize {
        let pos = self.values.partition_point(|&a| a < v);
        let left = pos.checked_sub(1).map(|p| v - self.values[p]);
        let right = self.values.get(pos).map(|&a| a - v);
        let best = match (left, right) {
            (Some(l), Some(r)) => l.min(r),
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("arm checked non-empty"),
        };
        let mut winner = usize::MAX;
        let mut p = pos;
        while p > 0 && v - self.values[p - 1] == best {
            p -= 1;
            winner = winner.min(self.index[p]);
        }
        let mut p = pos;
        while p < self.values.len() && self.values[p] - v == best {
            winner = winner.min(self.index[p]);
            p += 1;
        }
        winner
    }
}

/// Match on a scalar such as the propensity score.
pub fn match_on_scalar(values: &[f64], w: &[bool]) -> Result<MatchResult> {
    if values.len() != w.len() {
        return Err(Error::Invalid("values and treatments differ in length".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("matching value {i} is not finite")));
    }
    check_arms(w)?;
    let arms = [SortedArm::new(values, w, false), SortedArm::new(values, w, true)];
    let match_index = (0..values.len())
        .map(|i| arms[usize::from(!w[i])].nearest(values[i]))
        .collect();
    Ok(MatchResult::from_matches(match_index))
}

/// Match on the full covariate vector under Euclidean distance.
pub fn match_on_covariates(ds: &Dataset) -> Result<MatchResult> {
    let w = ds.treatments();
    if ds.dim() == 1 {
        let x: Vec<f64> = ds.subjects().iter().map(|s| s.x[0]).collect();
        return match_on_scalar(&x, &w);
    }
    let points: Vec<&[f64]> = ds.subjects().iter().map(|s| s.x.as_slice()).collect();
    match_on_points(&points, &w)
}

/// Brute-force Euclidean matching of arbitrary points.
pub fn match_on_points(points: &[&[f64]], w: &[bool]) -> Result<MatchResult> {
    if points.len() != w.len() {
        return Err(Error::Invalid("points and treatments differ in length".into()));
    }
    check_arms(w)?;
    let arms: [Vec<usize>; 2] = [
        (0..w.len()).filter(|&i| !w[i]).collect(),
        (0..w.len()).filter(|&i| w[i]).collect(),
    ];
    let match_index = (0..w.len())
        .map(|i| {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for &j in &arms[usize::from(!w[i])] {
                let d: f64 = points[i]
                    .iter()
                    .zip(points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best {
                    best = d;
                    arg = j;
                }
            }
            arg
        })
        .collect();
    Ok(MatchResult::from_matches(match_index))
}

/// Match counts under both arms: observed for the own arm, imputed from the
/// same score quintile for the other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KImputation {
    pub k0: Vec<usize>,
    pub k1: Vec<usize>,
    /// Score quintile, 1 to 5.
    pub quintile: Vec<u8>,
}

impl KImputation {
    pub fn k(&self, i: usize, arm: bool) -> usize {
        if arm {
            self.k1[i]
        } else {
            self.k0[i]
        }
    }
}

/// Rank-based score quintiles; ties are ordered by index.
pub fn score_quintiles(scores: &[f64]) -> Vec<u8> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut bins = vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = (5 * rank / n) as u8 + 1;
    }
    bins
}

/// Impute `k_i(1 - w_i)` by drawing uniformly from the observed counts of
/// opposite-arm subjects in the same score quintile. An empty quintile widens
/// to the adjacent bins.
pub fn impute_k<R: Rng + ?Sized>(
    mr: &MatchResult,
    scores: &[f64],
    w: &[bool],
    rng: &mut R,
) -> Result<KImputation> {
    let n = mr.len();
    if scores.len() != n || w.len() != n {
        return Err(Error::Invalid("imputation inputs differ in length".into()));
    }
    check_arms(w)?;
    let quintile = score_quintiles(scores);
    // pools[arm][bin - 1]
    let mut pools: [Vec<Vec<usize>>; 2] = [vec![Vec::new(); 5], vec![Vec::new(); 5]];
    for i in 0..n {
        pools[usize::from(w[i])][usize::from(quintile[i] - 1)].push(mr.k[i]);
    }
    let mut k0 = vec![0; n];
    let mut k1 = vec![0; n];
    let mut widened: Vec<usize> = Vec::new();
    for i in 0..n {
        let own = mr.k[i];
        let other = !w[i];
        let bin = usize::from(quintile[i] - 1);
        let pool = &pools[usize::from(other)];
        let drawn = if pool[bin].is_empty() {
            widened.clear();
            for radius in 1..5 {
                if let Some(b) = bin.checked_sub(radius) {
                    widened.extend(&pool[b]);
                }
                if bin + radius < 5 {
                    widened.extend(&pool[bin + radius]);
                }
                if !widened.is_empty() {
                    break;
                }
            }
            widened[rng.random_range(0..widened.len())]
        } else {
            pool[bin][rng.random_range(0..pool[bin].len())]
        };
        if w[i] {
            k1[i] = own;
            k0[i] = drawn;
        } else {
            k0[i] = own;
            k1[i] = drawn;
        }
    }
    Ok(KImputation { k0, k1, quintile })
}

/// One cell of the imputed dataset: subject `row` under arm `arm`, with the
/// outcome taken from subject `source`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputedOutcome {
    pub row: usize,
    pub arm: bool,
    pub source: usize,
    pub time: f64,
    pub event: bool,
}

/// Both potential outcomes of every subject, observed or borrowed from the match.
pub fn imputed_dataset_view<'a>(
    ds: &'a Dataset,
    mr: &'a MatchResult,
) -> impl Iterator<Item = ImputedOutcome> + 'a {
    let subjects = ds.subjects();
    (0..subjects.len()).flat_map(move |i| {
        [false, true].into_iter().map(move |arm| {
            let source = if subjects[i].treated == arm {
                i
            } else {
                mr.match_index[i]
            };
            ImputedOutcome {
                row: i,
                arm,
                source,
                time: subjects[source].time,
                event: subjects[source].event,
            }
        })
    })
}

/// Write the imputed dataset as CSV, one row per subject with both potential
/// outcomes side by side.
pub fn write_imputed_csv<W: Write>(ds: &Dataset, mr: &MatchResult, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(ds.covariate_names().iter().cloned());
    header.extend(
        ["w", "u0", "delta0", "source0", "u1", "delta1", "source1", "k", "weight"]
            .map(String::from),
    );
    wtr.write_record(&header)?;
    let cells: Vec<ImputedOutcome> = imputed_dataset_view(ds, mr).collect();
    for (i, pair) in cells.chunks_exact(2).enumerate() {
        let s = &ds.subjects()[i];
        let mut rec = vec![s.id.to_string()];
        rec.extend(s.x.iter().map(f64::to_string));
        rec.push(u8::from(s.treated).to_string());
        for c in pair {
            let src = &ds.subjects()[c.source];
            rec.push(c.time.to_string());
            rec.push(u8::from(c.event).to_string());
            rec.push(src.id.to_string());
        }
        rec.push(mr.k[i].to_string());
        rec.push((1 + mr.k[i]).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<imputed csv>", e))?;
    Ok(())
}
