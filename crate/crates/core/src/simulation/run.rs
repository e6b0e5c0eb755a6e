//! Monte Carlo driver and Table-2-style summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::generate::{calibrate_censoring, generate_replicate};
use crate::error::{Error, Result};
use crate::inference::{estimate_with_stream, EstimateConfig, Estimator, Method};
use crate::rng::{purpose, Stream};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.02;

/// Stream of replicate `r`; its data come from `.child(DATA)` and the
/// resampling methods from the other purposes below it.
pub fn replicate_stream(seed: u64, r: usize) -> Stream {
    Stream::root(seed).child(0).child(r as u64)
}

fn calibration_stream(seed: u64) -> Stream {
    Stream::root(seed).child(1)
}

/// Censoring bound the scenario uses: fixed or calibrated from pilot draws.
pub fn resolve_c_max(cfg: &ScenarioConfig) -> Result<f64> {
    match cfg.c_max {
        Some(c) => Ok(c),
        None => calibrate_censoring(cfg, calibration_stream(cfg.seed)),
    }
}

/// Analysis settings applied to every replicate.
pub fn estimate_config(cfg: &ScenarioConfig) -> EstimateConfig {
    EstimateConfig {
        estimators: cfg.estimators.clone(),
        methods: cfg.methods.clone(),
        ps_formula: cfg.fitted_formula(),
        b: cfg.b,
        alpha: cfg.alpha,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: Estimator,
    pub method: Method,
    pub beta_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covers: bool,
}

/// Per-replicate log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub n0: usize,
    pub n1: usize,
    pub censored_fraction: f64,
    pub error: Option<String>,
    pub redraws: usize,
    pub estimates: Vec<EstimateRecord>,
}

/// Summary of one (estimator, method) pair. `var_x1000` is the Monte Carlo
/// variance of the point estimate, shared by every method of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: Estimator,
    pub method: Method,
    pub bias_x100: f64,
    /// Monte Carlo standard error of the bias, same scale.
    pub bias_se_x100: f64,
    pub var_x1000: f64,
    pub ve_x1000: f64,
    pub cr_percent: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub version: String,
    /// Confounding level name, or `custom`.
    pub label: String,
    pub c_max: f64,
    pub reps: usize,
    pub failed: usize,
    pub rows: Vec<MetricsRow>,
    pub config: ScenarioConfig,
}

/// A finished scenario: summary plus the per-replicate log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub table: MetricsTable,
    pub replicates: Vec<ReplicateRecord>,
}

impl SimulationRun {
    pub fn check_failures(&self) -> Result<()> {
        let total = self.table.reps;
        let limit = (MAX_FAILURE_RATE * total as f64).floor() as usize;
        if self.table.failed > limit {
            return Err(Error::TooManyFailures {
                failed: self.table.failed,
                total,
                limit,
            });
        }
        Ok(())
    }
}

/// Row order of the metrics table.
pub const TABLE_ORDER: [(Estimator, Method); 8] = [
    (Estimator::Naive, Method::Software),
    (Estimator::Ipw, Method::Software),
    (Estimator::Regression, Method::Software),
    (Estimator::PsmTrue, Method::Software),
    (Estimator::Psm, Method::Software),
    (Estimator::Psm, Method::Asymptotic),
    (Estimator::Psm, Method::NaiveBootstrap),
    (Estimator::Psm, Method::DoubleResampling),
];

fn run_one(cfg: &ScenarioConfig, est: &EstimateConfig, c_max: f64, r: usize) -> ReplicateRecord {
    let stream = replicate_stream(cfg.seed, r);
    let mut rec = ReplicateRecord {
        replicate: r,
        n0: 0,
        n1: 0,
        censored_fraction: f64::NAN,
        error: None,
        redraws: 0,
        estimates: Vec::new(),
    };
    let rep = match generate_replicate(cfg, c_max, &mut stream.child(purpose::DATA).rng()) {
        Ok(rep) => rep,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    (rec.n0, rec.n1) = rep.data.arm_sizes();
    rec.censored_fraction = rep.censored_fraction;
    match estimate_with_stream(&rep.data, est, Some(&rep.true_scores), stream) {
        Ok(report) => {
            rec.redraws =
                report.diagnostics.double_resampling_redraws + report.diagnostics.naive_bootstrap_redraws;
            for (e, m) in TABLE_ORDER {
                let Some(er) = report.estimators.get(&e) else { continue };
                let Some(me) = er.methods.get(&m) else { continue };
                rec.estimates.push(EstimateRecord {
                    estimator: e,
                    method: m,
                    beta_hat: er.beta_hat,
                    variance: me.variance,
                    ci_low: me.ci_low,
                    ci_high: me.ci_high,
                    covers: me.covers(cfg.beta0),
                });
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Aggregate successful replicates into bias, variance, mean variance
/// estimate and coverage per row.
pub fn summarize(cfg: &ScenarioConfig, records: &[ReplicateRecord]) -> Vec<MetricsRow> {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut rows = Vec::new();
    for (e, m) in TABLE_ORDER {
        let picked: Vec<&EstimateRecord> = ok
            .iter()
            .filter_map(|r| r.estimates.iter().find(|x| x.estimator == e && x.method == m))
            .collect();
        if picked.is_empty() {
            continue;
        }
        let n = picked.len() as f64;
        let betas: Vec<f64> = picked.iter().map(|x| x.beta_hat).collect();
        let mean = betas.iter().sum::<f64>() / n;
        let var = crate::inference::sample_variance(&betas);
        rows.push(MetricsRow {
            estimator: e,
            method: m,
            bias_x100: 100.0 * (mean - cfg.beta0),
            bias_se_x100: 100.0 * (var / n).sqrt(),
            var_x1000: 1000.0 * var,
            ve_x1000: 1000.0 * picked.iter().map(|x| x.variance).sum::<f64>() / n,
            cr_percent: 100.0 * picked.iter().filter(|x| x.covers).count() as f64 / n,
            count: picked.len(),
        });
    }
    rows
}

/// Progress callback: `(finished, total)`.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Run every replicate and summarise, without enforcing the failure cap.
pub fn run_replicates(cfg: &ScenarioConfig, progress: Option<Progress<'_>>) -> Result<SimulationRun> {
    cfg.validate()?;
    let c_max = resolve_c_max(cfg)?;
    let est = estimate_config(cfg);
    est.validate()?;
    let done = AtomicUsize::new(0);
    let records: Vec<ReplicateRecord> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let rec = run_one(cfg, &est, c_max, r);
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(p) = progress {
                p(finished, cfg.reps);
            }
            rec
        })
        .collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let table = MetricsTable {
        version: env!("CARGO_PKG_VERSION").to_string(),
        label: cfg.confounding().map_or("custom", |c| c.name()).to_string(),
        c_max,
        reps: cfg.reps,
        failed,
        rows: summarize(cfg, &records),
        config: cfg.clone(),
    };
    Ok(SimulationRun {
        table,
        replicates: records,
    })
}

/// Run a scenario; more than 2% failed replicates is an error.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationRun> {
    let run = run_replicates(cfg, None)?;
    run.check_failures()?;
    Ok(run)
}

const LEVEL_ORDER: [&str; 4] = ["weak", "medium", "strong", "custom"];

/// Write tables as CSV: one row per `(beta0, ps_spec, estimator, method)`,
/// with `Bias, Var, VE, CR` column groups per confounding level.
pub fn write_metrics_csv<W: Write>(tables: &[MetricsTable], out: W) -> Result<()> {
    let mut levels: Vec<&str> = LEVEL_ORDER
        .into_iter()
        .filter(|l| tables.iter().any(|t| t.label == *l))
        .collect();
    levels.dedup();
    // panels in first-seen order
    let mut panels: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), &MetricsTable> = BTreeMap::new();
    for t in tables {
        let key = (t.config.beta0.to_string(), t.config.ps_spec.name().to_string());
        if !panels.contains(&key) {
            panels.push(key.clone());
        }
        if cells.insert((key.0, key.1, t.label.clone()), t).is_some() {
            return Err(Error::Invalid(format!("two tables share the `{}` cell", t.label)));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["beta0".to_string(), "ps_spec".into(), "estimator".into(), "method".into()];
    for l in &levels {
        for m in ["bias_x100", "var_x1000", "ve_x1000", "cr_percent"] {
            header.push(format!("{l}_{m}"));
        }
    }
    w.write_record(&header)?;
    for (beta0, spec) in &panels {
        for (e, m) in TABLE_ORDER {
            let found: Vec<Option<&MetricsRow>> = levels
                .iter()
                .map(|l| {
                    cells
                        .get(&(beta0.clone(), spec.clone(), l.to_string()))
                        .and_then(|t| t.rows.iter().find(|r| r.estimator == e && r.method == m))
                })
                .collect();
            if found.iter().all(Option::is_none) {
                continue;
            }
            let mut rec = vec![beta0.clone(), spec.clone(), e.name().to_string(), m.name().to_string()];
            for row in found {
                match row {
                    Some(r) => rec.extend(
                        [r.bias_x100, r.var_x1000, r.ve_x1000, r.cr_percent].map(|v| v.to_string()),
                    ),
                    None => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::config::{Confounding, PsSpec};

    fn small(reps: usize) -> ScenarioConfig {
        ScenarioConfig {
            n: 300,
            reps,
            b: 100,
            seed: 21,
            methods: vec![Method::Software, Method::Asymptotic, Method::DoubleResampling],
            ..ScenarioConfig::cell(Confounding::Weak, PsSpec::Correct, 0.0)
        }
    }

    #[test]
    fn smoke_run_emits_every_row() {
        let run = run_scenario(&small(10)).unwrap();
        assert_eq!(run.table.failed, 0);
        assert_eq!(run.replicates.len(), 10);
        let pairs: Vec<_> = run.table.rows.iter().map(|r| (r.estimator, r.method)).collect();
        assert_eq!(
            pairs,
            TABLE_ORDER
                .into_iter()
                .filter(|(_, m)| *m != Method::NaiveBootstrap)
                .collect::<Vec<_>>()
        );
        for r in &run.table.rows {
            assert!((0.0..=100.0).contains(&r.cr_percent));
            assert!(r.var_x1000 > 0.0 && r.count == 10);
        }
        let mut buf = Vec::new();
        write_metrics_csv(&[run.table.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 7);
        assert!(lines[0].starts_with("beta0,ps_spec,estimator,method,weak_bias_x100"));
        assert!(lines[1].starts_with("0,correct,nai,software,"));
    }

    #[test]
    fn same_seed_same_records() {
        let a = run_scenario(&small(4)).unwrap();
        let b = run_scenario(&small(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failure_cap() {
        let mut run = run_scenario(&small(2)).unwrap();
        run.table.reps = 100;
        run.table.failed = 2;
        assert!(run.check_failures().is_ok());
        run.table.failed = 3;
        assert!(matches!(run.check_failures(), Err(Error::TooManyFailures { limit: 2, .. })));
    }

    #[test]
    fn no_confounding_is_unbiased() {
        let cfg = ScenarioConfig {
            n: 400,
            reps: 60,
            theta: [0.0, 0.0, 0.0],
            seed: 5,
            methods: vec![Method::Software],
            ..ScenarioConfig::default()
        };
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.table.label, "custom");
        for r in &run.table.rows {
            assert!(
                r.bias_x100.abs() <= 3.0 * r.bias_se_x100,
                "{} bias {} se {}",
                r.estimator,
                r.bias_x100,
                r.bias_se_x100
            );
        }
    }
}
