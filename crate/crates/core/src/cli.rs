//! Command-line front end: `estimate`, `simulate` and `dump-matches`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_csv, trim, CsvSchema, Dataset, TrimReport};
use crate::error::{Error, Result};
use crate::inference::{estimate_all, parse_list, EstimateConfig, Estimator, InferenceReport, Method};
use crate::matching::{match_on_scalar, write_imputed_csv};
use crate::propensity::{fit_logistic, PsFormula};
use crate::simulation::{
    standard_grid, run_replicates, write_metrics_csv, Confounding, ControlOutcome, PsSpec, ScenarioConfig,
    SimulationRun,
};

#[derive(Debug, Parser)]
#[command(name = "hazmatch", version, about = "Matching estimators of the marginal causal hazard ratio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the marginal hazard ratio of a CSV dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Write the matched (imputed) dataset as CSV.
    DumpMatches(DumpArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Treatment column (0/1).
    #[arg(long)]
    pub col_w: Option<String>,
    /// Observed time column.
    #[arg(long)]
    pub col_time: Option<String>,
    /// Event indicator column (0/1).
    #[arg(long)]
    pub col_event: Option<String>,
    /// Comma-separated covariate columns; default is every other column.
    #[arg(long)]
    pub covariates: Option<String>,
    /// Drop subjects whose fitted score lies outside `lo,hi`, then refit.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.1,0.9")]
    pub trim: Option<String>,
    /// `identity`, `sqrt` or `pow:p1,p2,...`.
    #[arg(long)]
    pub ps_formula: Option<String>,
    /// TOML or JSON file with the same settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated variance methods.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated estimators.
    #[arg(long)]
    pub estimators: Option<String>,
    /// Bootstrap replicates.
    #[arg(long = "B", short = 'B')]
    pub b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON report path; without it the JSON goes to stdout and the table to
    /// stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML or JSON); flags override its fields.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Run all 18 standard cells on top of the scenario.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, value_parser = parse_level)]
    pub level: Option<Confounding>,
    #[arg(long, value_parser = parse_spec)]
    pub ps_spec: Option<PsSpec>,
    #[arg(long, value_parser = parse_control, help = "`covariate` or `exponential`")]
    pub control_outcome: Option<ControlOutcome>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "B", short = 'B')]
    pub b: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed censoring bound instead of calibration.
    #[arg(long)]
    pub c_max: Option<f64>,
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate JSON log; defaults to `out` with a `.json` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// No progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_level(s: &str) -> Result<Confounding> {
    s.parse()
}

fn parse_spec(s: &str) -> Result<PsSpec> {
    match s {
        "correct" => Ok(PsSpec::Correct),
        "sqrt_misspec" | "misspec" => Ok(PsSpec::SqrtMisspec),
        other => Err(Error::Config(format!("unknown ps spec `{other}`"))),
    }
}

fn parse_control(s: &str) -> Result<ControlOutcome> {
    match s {
        "covariate" => Ok(ControlOutcome::Covariate),
        "exponential" => Ok(ControlOutcome::Exponential),
        other => Err(Error::Config(format!("unknown control outcome `{other}`"))),
    }
}

/// Settings of `estimate` and `dump-matches` as read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateFile {
    pub data: Option<PathBuf>,
    pub col_w: Option<String>,
    pub col_time: Option<String>,
    pub col_event: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub trim: Option<[f64; 2]>,
    pub ps_formula: Option<PsFormula>,
    pub estimators: Option<Vec<Estimator>>,
    pub methods: Option<Vec<Method>>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

impl EstimateFile {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// Where the data came from and how it was prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub data: String,
    pub schema: CsvSchema,
    pub trim: Option<TrimReport>,
}

/// JSON written by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    #[serde(flatten)]
    pub report: InferenceReport,
    pub input: InputInfo,
}

/// Data, schema and formula after merging flags over the config file.
struct Resolved {
    path: PathBuf,
    schema: CsvSchema,
    trim: Option<(f64, f64)>,
    formula: PsFormula,
    file: EstimateFile,
}

fn parse_trim(s: &str) -> Result<(f64, f64)> {
    let v: Vec<&str> = s.split(',').collect();
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad trimming bound `{t}`")))
    };
    match v.as_slice() {
        [lo, hi] => Ok((num(lo)?, num(hi)?)),
        _ => Err(Error::Config(format!("--trim expects `lo,hi`, got `{s}`"))),
    }
}

fn resolve(args: &DataArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => EstimateFile::from_file(p)?,
        None => EstimateFile::default(),
    };
    let path = args
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| Error::Config("no input data; pass --data".into()))?;
    let defaults = CsvSchema::default();
    let covariates = match &args.covariates {
        Some(c) => c
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => file.covariates.clone().unwrap_or_default(),
    };
    let schema = CsvSchema {
        treatment: args.col_w.clone().or_else(|| file.col_w.clone()).unwrap_or(defaults.treatment),
        time: args.col_time.clone().or_else(|| file.col_time.clone()).unwrap_or(defaults.time),
        event: args.col_event.clone().or_else(|| file.col_event.clone()).unwrap_or(defaults.event),
        covariates,
    };
    let trim = match &args.trim {
        Some(s) => Some(parse_trim(s)?),
        None => file.trim.map(|[lo, hi]| (lo, hi)),
    };
    let formula = match &args.ps_formula {
        Some(s) => s.parse()?,
        None => file.ps_formula.clone().unwrap_or_default(),
    };
    Ok(Resolved {
        path,
        schema,
        trim,
        formula,
        file,
    })
}

/// Load the data and apply trimming on the full-sample fitted score.
fn prepare(r: &Resolved) -> Result<(Dataset, Option<TrimReport>)> {
    let ds = load_csv(&r.path, &r.schema)?;
    match r.trim {
        None => Ok((ds, None)),
        Some((lo, hi)) => {
            let fit = fit_logistic(&ds, &r.formula)?;
            let (kept, report) = trim(&ds, &fit.scores, lo, hi)?;
            Ok((kept, Some(report)))
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, mut out: impl Write, what: &Path) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(what, e))
}

pub fn estimate_config(args: &EstimateArgs, file: &EstimateFile, formula: PsFormula) -> Result<EstimateConfig> {
    let defaults = EstimateConfig::default();
    let cfg = EstimateConfig {
        estimators: match &args.estimators {
            Some(s) => parse_list(s)?,
            None => file.estimators.clone().unwrap_or(defaults.estimators),
        },
        methods: match &args.methods {
            Some(s) => parse_list(s)?,
            None => file.methods.clone().unwrap_or(defaults.methods),
        },
        ps_formula: formula,
        b: args.b.or(file.b).unwrap_or(defaults.b),
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Run `estimate` and return the JSON document.
pub fn run_estimate(args: &EstimateArgs) -> Result<EstimateOutput> {
    let r = resolve(&args.data)?;
    let cfg = estimate_config(args, &r.file, r.formula.clone())?;
    let (ds, trimmed) = prepare(&r)?;
    let report = with_threads(args.threads, || estimate_all(&ds, &cfg, None))??;
    Ok(EstimateOutput {
        report,
        input: InputInfo {
            data: r.path.display().to_string(),
            schema: r.schema,
            trim: trimmed,
        },
    })
}

/// Plain-text summary of an estimate.
pub fn render_table(out: &EstimateOutput) -> String {
    let rep = &out.report;
    let d = &rep.diagnostics;
    let level = 100.0 * (1.0 - rep.alpha);
    let mut s = String::new();
    let _ = writeln!(s, "hazmatch {}  seed {}  B {}", rep.version, rep.seed, rep.b);
    let _ = writeln!(
        s,
        "n = {} (control {}, treated {}), events = {}, tau = {}",
        d.n, d.n0, d.n1, d.events, d.tau
    );
    if let Some(t) = &out.input.trim {
        let _ = writeln!(
            s,
            "trimmed to scores in [{}, {}]: dropped {}",
            t.threshold_low,
            t.threshold_high,
            t.dropped_ids.len()
        );
    }
    let _ = writeln!(
        s,
        "{:<10} {:<11} {:>10} {:>8} {:>11} {:>21} {:>19}",
        "estimator",
        "method",
        "beta_hat",
        "HR",
        "variance",
        format!("{level}% CI (log HR)"),
        format!("{level}% CI (HR)")
    );
    for (est, r) in &rep.estimators {
        if r.methods.is_empty() {
            let _ = writeln!(s, "{:<10} {:<11} {:>10.4} {:>8.4}", est.name(), "-", r.beta_hat, r.hr);
        }
        for (m, e) in &r.methods {
            let _ = writeln!(
                s,
                "{:<10} {:<11} {:>10.4} {:>8.4} {:>11.4e} {:>21} {:>19}",
                est.name(),
                m.name(),
                r.beta_hat,
                r.hr,
                e.variance,
                format!("[{:.4}, {:.4}]", e.ci_low, e.ci_high),
                format!("[{:.4}, {:.4}]", e.hr_ci_low, e.hr_ci_high)
            );
        }
    }
    s
}

fn estimate_command(args: &EstimateArgs) -> Result<()> {
    let out = run_estimate(args)?;
    let table = render_table(&out);
    match &args.out {
        Some(p) => {
            write_json(&out, create(p)?, p)?;
            print!("{table}");
        }
        None => {
            write_json(&out, io::stdout().lock(), Path::new("<stdout>"))?;
            eprint!("{table}");
        }
    }
    Ok(())
}

/// Scenario after applying the flags.
pub fn scenario(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.scenario {
        Some(p) => ScenarioConfig::from_file(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(l) = args.level {
        cfg.theta = l.theta();
    }
    if let Some(s) = args.ps_spec {
        cfg.ps_spec = s;
    }
    if let Some(c) = args.control_outcome {
        cfg.control_outcome = c;
    }
    if let Some(v) = args.beta0 {
        cfg.beta0 = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.reps {
        cfg.reps = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.c_max.is_some() {
        cfg.c_max = args.c_max;
    }
    if let Some(s) = &args.methods {
        cfg.methods = parse_list(s)?;
    }
    if let Some(s) = &args.estimators {
        cfg.estimators = parse_list(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// JSON log written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub version: String,
    pub runs: Vec<SimulationRun>,
}

/// Run every requested cell. The failure cap is not enforced here.
pub fn run_simulate(args: &SimulateArgs) -> Result<SimulationLog> {
    let base = scenario(args)?;
    let cells = if args.grid { standard_grid(&base) } else { vec![base] };
    let total = cells.len();
    let mut runs = Vec::with_capacity(total);
    for (i, cfg) in cells.iter().enumerate() {
        let label = format!(
            "[{}/{}] beta0={} {} {}",
            i + 1,
            total,
            cfg.beta0,
            cfg.ps_spec,
            cfg.confounding().map_or("custom", |c| c.name())
        );
        let report = |done: usize, reps: usize| {
            let step = (reps / 20).max(1);
            if done % step == 0 || done == reps {
                eprintln!("{label}: {done}/{reps}");
            }
        };
        let progress: Option<&(dyn Fn(usize, usize) + Sync)> = if args.quiet { None } else { Some(&report) };
        let run = with_threads(args.threads, || run_replicates(cfg, progress))??;
        runs.push(run);
    }
    Ok(SimulationLog {
        version: env!("CARGO_PKG_VERSION").to_string(),
        runs,
    })
}

fn simulate_command(args: &SimulateArgs) -> Result<()> {
    let log = run_simulate(args)?;
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("json"));
    write_json(&log, create(&log_path)?, &log_path)?;
    let tables: Vec<_> = log.runs.iter().map(|r| r.table.clone()).collect();
    let mut w = create(&args.out)?;
    write_metrics_csv(&tables, &mut w)?;
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    for run in &log.runs {
        run.check_failures()?;
    }
    Ok(())
}

/// Matched dataset of `dump-matches` as CSV text.
pub fn run_dump(args: &DumpArgs) -> Result<Vec<u8>> {
    let r = resolve(&args.data)?;
    let (ds, _) = prepare(&r)?;
    let fit = fit_logistic(&ds, &r.formula)?;
    let mr = match_on_scalar(&fit.scores, &ds.treatments())?;
    let mut buf = Vec::new();
    write_imputed_csv(&ds, &mr, &mut buf)?;
    Ok(buf)
}

fn dump_command(args: &DumpArgs) -> Result<()> {
    let buf = run_dump(args)?;
    match &args.out {
        Some(p) => std::fs::write(p, buf).map_err(|e| Error::io(p, e)),
        None => io::stdout()
            .lock()
            .write_all(&buf)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => estimate_command(a),
        Command::Simulate(a) => simulate_command(a),
        Command::DumpMatches(a) => dump_command(a),
    }
}

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::TooManyFailures { .. } => 3,
        Error::Config(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DEFAULT_TRIM;

    #[test]
    fn trim_bounds_parse() {
        assert_eq!(parse_trim("0.05, 0.95").unwrap(), (0.05, 0.95));
        assert!(parse_trim("0.1").is_err());
        assert!(parse_trim("a,b").is_err());
    }

    #[test]
    fn bare_trim_flag_uses_default_bounds() {
        let cli = Cli::try_parse_from(["hazmatch", "dump-matches", "--data", "d.csv", "--trim"]).unwrap();
        let Command::DumpMatches(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let r = resolve(&a.data).unwrap();
        assert_eq!(r.trim, Some(DEFAULT_TRIM));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "data = \"x.csv\"\nB = 300\nseed = 4\nmethods = [\"asymp\"]\ncol_w = \"treat\"\n").unwrap();
        let cli = Cli::try_parse_from([
            "hazmatch",
            "estimate",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .unwrap();
        let Command::Estimate(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let r = resolve(&a.data).unwrap();
        assert_eq!(r.path, PathBuf::from("x.csv"));
        assert_eq!(r.schema.treatment, "treat");
        let cfg = estimate_config(&a, &r.file, r.formula.clone()).unwrap();
        assert_eq!((cfg.b, cfg.seed), (300, 9));
        assert_eq!(cfg.methods, vec![Method::Asymptotic]);
    }

    #[test]
    fn simulate_flags_build_scenario() {
        let cli = Cli::try_parse_from([
            "hazmatch", "simulate", "--out", "t.csv", "--level", "strong", "--beta0", "-0.5", "--ps-spec",
            "sqrt_misspec", "--reps", "7",
        ])
        .unwrap();
        let Command::Simulate(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let cfg = scenario(&a).unwrap();
        assert_eq!(cfg.confounding(), Some(Confounding::Strong));
        assert_eq!((cfg.beta0, cfg.reps, cfg.ps_spec), (-0.5, 7, PsSpec::SqrtMisspec));
    }
}
