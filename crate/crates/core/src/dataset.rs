//! Observational survival records: ingest, validation, trimming and the
//! counting-process accessors the estimators are written against.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observational record.
///
/// `time` is the follow-up time `min(T, C)` and `event` flags whether it ended
/// in the event of interest. The counting process `N(t)` and the at-risk
/// process `Y(t)` are derived on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: usize,
    pub x: Vec<f64>,
    pub treated: bool,
    pub time: f64,
    pub event: bool,
}

impl Subject {
    /// `N(t) = 1{time <= t, event}`.
    pub fn counting(&self, t: f64) -> u8 {
        u8::from(self.event && self.time <= t)
    }

    /// `Y(t) = 1{time >= t}`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.time >= t
    }

    pub fn arm(&self) -> u8 {
        u8::from(self.treated)
    }
}

/// Immutable, validated collection of subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
    tau_override: Option<f64>,
}

impl Dataset {
    /// Validate and wrap `subjects`. Covariates are named `x1..xd`.
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let d = subjects.first().map_or(0, |s| s.x.len());
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        Self::with_names(subjects, names)
    }

    pub fn with_names(subjects: Vec<Subject>, covariate_names: Vec<String>) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::Invalid(format!(
                "a dataset needs at least 2 subjects, got {}",
                subjects.len()
            )));
        }
        let d = covariate_names.len();
        for (row, s) in subjects.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::InvalidRow {
                    row: row + 1,
                    message: format!("expected {d} covariates, found {}", s.x.len()),
                });
            }
            if let Some(j) = s.x.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidRow {
                    row: row + 1,
                    message: format!("covariate `{}` is not finite", covariate_names[j]),
                });
            }
            if !(s.time.is_finite() && s.time > 0.0) {
                return Err(Error::InvalidRow {
                    row: row + 1,
                    message: format!("follow-up time must be positive, got {}", s.time),
                });
            }
        }
        let ds = Dataset {
            subjects,
            covariate_names,
            tau_override: None,
        };
        let (n0, n1) = ds.arm_sizes();
        if n0 == 0 {
            return Err(Error::EmptyArm { arm: 0, hint: "" });
        }
        if n1 == 0 {
            return Err(Error::EmptyArm { arm: 1, hint: "" });
        }
        Ok(ds)
    }

    /// Override the administrative horizon. Events after `tau` are ignored by
    /// the estimating equations.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
        }
        self.tau_override = Some(tau);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Number of baseline covariates.
    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Administrative horizon; the largest follow-up time unless overridden.
    pub fn tau(&self) -> f64 {
        self.tau_override.unwrap_or_else(|| {
            self.subjects
                .iter()
                .map(|s| s.time)
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.treated).collect()
    }

    /// `(n0, n1)`: control and treated counts.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.subjects.iter().filter(|s| s.treated).count();
        (self.subjects.len() - n1, n1)
    }

    /// `sum_i Y_i(t)`, optionally restricted to one arm.
    pub fn risk_set_size(&self, t: f64, arm: Option<bool>) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.at_risk(t) && arm.is_none_or(|a| s.treated == a))
            .count()
    }

    /// Dataset of the subjects at `indices` (repeats allowed), keeping ids and
    /// the horizon override.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        let mut ds = Dataset::with_names(subjects, self.covariate_names.clone())?;
        ds.tau_override = self.tau_override;
        Ok(ds)
    }

    /// Same subjects with treatment replaced by `treated`.
    pub fn with_treatments(&self, treated: &[bool]) -> Result<Dataset> {
        if treated.len() != self.len() {
            return Err(Error::Invalid("treatment vector length mismatch".into()));
        }
        let subjects = self
            .subjects
            .iter()
            .zip(treated)
            .map(|(s, &w)| Subject {
                treated: w,
                ..s.clone()
            })
            .collect();
        let mut ds = Dataset::with_names(subjects, self.covariate_names.clone())?;
        ds.tau_override = self.tau_override;
        Ok(ds)
    }
}

/// Column mapping for CSV ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment: String,
    pub time: String,
    pub event: String,
    /// Covariate columns; empty means every column not otherwise mapped.
    pub covariates: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            treatment: "w".into(),
            time: "u".into(),
            event: "delta".into(),
            covariates: Vec::new(),
        }
    }
}

fn parse_binary(cell: &str, row: usize, what: &str) -> Result<bool> {
    let v: f64 = parse_number(cell, row, what)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::InvalidRow {
            row,
            message: format!("{what} not binary: `{cell}`"),
        })
    }
}

fn parse_number(cell: &str, row: usize, what: &str) -> Result<f64> {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return Err(Error::InvalidRow {
            row,
            message: format!("missing value in column `{what}`"),
        });
    }
    trimmed.parse::<f64>().map_err(|_| Error::InvalidRow {
        row,
        message: format!("non-numeric value `{trimmed}` in column `{what}`"),
    })
}

/// Read a dataset from a headed CSV file. Row numbers in errors count data
/// rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let w_col = column(&schema.treatment)?;
    let t_col = column(&schema.time)?;
    let e_col = column(&schema.event)?;
    let covariates: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![w_col, t_col, e_col].contains(i))
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    if covariates.is_empty() {
        return Err(Error::MissingColumn("at least one covariate".into()));
    }
    let x_cols = covariates
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut subjects = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let treated = parse_binary(cell(w_col), row, "treatment")?;
        let event = parse_binary(cell(e_col), row, "event")?;
        let time = parse_number(cell(t_col), row, &schema.time)?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::InvalidRow {
                row,
                message: format!("follow-up time must be positive, got {time}"),
            });
        }
        let x = x_cols
            .iter()
            .zip(&covariates)
            .map(|(&c, name)| parse_number(cell(c), row, name))
            .collect::<Result<Vec<_>>>()?;
        subjects.push(Subject {
            id: i,
            x,
            treated,
            time,
            event,
        });
    }
    Dataset::with_names(subjects, covariates)
}

/// Write `ds` with columns `covariates..., w, u, delta`.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, file)
}

pub fn write_csv<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.covariate_names.iter().map(String::as_str).collect();
    header.extend(["w", "u", "delta"]);
    wtr.write_record(&header)?;
    for s in &ds.subjects {
        let mut row: Vec<String> = s.x.iter().map(f64::to_string).collect();
        row.push(u8::from(s.treated).to_string());
        row.push(s.time.to_string());
        row.push(u8::from(s.event).to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Outcome of propensity-score trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub kept_ids: Vec<usize>,
    pub dropped_ids: Vec<usize>,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

/// Default overlap bounds.
pub const DEFAULT_TRIM: (f64, f64) = (0.1, 0.9);

/// Keep the subjects whose score lies in `[low, high]`.
pub fn trim(ds: &Dataset, scores: &[f64], low: f64, high: f64) -> Result<(Dataset, TrimReport)> {
    if !(0.0..1.0).contains(&low) || !(low < high && high <= 1.0) {
        return Err(Error::Invalid(format!(
            "trimming bounds must satisfy 0 <= low < high <= 1, got ({low}, {high})"
        )));
    }
    if scores.len() != ds.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} subjects",
            scores.len(),
            ds.len()
        )));
    }
    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| (low..=high).contains(&scores[i]));
    for arm in [false, true] {
        if !kept.iter().any(|&i| ds.subjects[i].treated == arm) {
            return Err(Error::EmptyArm {
                arm: u8::from(arm),
                hint: " after trimming; widen the trimming bounds",
            });
        }
    }
    let trimmed = ds.select(&kept).map_err(|e| match e {
        Error::EmptyArm { arm, .. } => Error::EmptyArm {
            arm,
            hint: " after trimming; widen the trimming bounds",
        },
        other => other,
    })?;
    let report = TrimReport {
        kept_ids: kept.iter().map(|&i| ds.subjects[i].id).collect(),
        dropped_ids: dropped.iter().map(|&i| ds.subjects[i].id).collect(),
        threshold_low: low,
        threshold_high: high,
    };
    Ok((trimmed, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: usize, x: f64, treated: bool, time: f64, event: bool) -> Subject {
        Subject {
            id,
            x: vec![x],
            treated,
            time,
            event,
        }
    }

    fn toy() -> Dataset {
        Dataset::new(vec![
            subject(0, 0.1, true, 2.0, true),
            subject(1, 0.2, false, 1.0, true),
            subject(2, 0.3, true, 3.0, false),
            subject(3, 0.4, false, 5.0, true),
            subject(4, 0.5, false, 4.0, false),
        ])
        .unwrap()
    }

    #[test]
    fn parses_four_row_file() {
        let csv = "x1,w,u,delta\n0.5,1,2.0,1\n-1,0,1.5,0\n2,1,0.3,1\n0,0,4,1\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.subjects()[1].x, vec![-1.0]);
        assert!(!ds.subjects()[1].event);
        assert_eq!(ds.tau(), 4.0);
    }

    #[test]
    fn zero_time_names_row() {
        let csv = "x1,w,u,delta\n0.5,1,2.0,1\n-1,0,1.5,0\n2,1,0,1\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::InvalidRow { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_binary_treatment_rejected() {
        let csv = "x1,w,u,delta\n0.5,2,2.0,1\n-1,0,1.5,0\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("treatment not binary"), "{err}");
    }

    #[test]
    fn missing_column_and_missing_value() {
        let csv = "x1,w,time,delta\n0.5,1,2.0,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &CsvSchema::default()),
            Err(Error::MissingColumn(c)) if c == "u"
        ));
        let csv = "x1,w,u,delta\n,1,2.0,1\n1,0,1,1\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let csv = "x1,w,u,delta\nabc,1,2.0,1\n1,0,1,1\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");
    }

    #[test]
    fn schema_selects_named_columns() {
        let csv = "id,age,trt,os,died,stage\n1,50,1,2.5,1,2\n2,60,0,1.5,0,3\n";
        let schema = CsvSchema {
            treatment: "trt".into(),
            time: "os".into(),
            event: "died".into(),
            covariates: vec!["age".into(), "stage".into()],
        };
        let ds = read_csv(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.covariate_names(), ["age", "stage"]);
        assert_eq!(ds.subjects()[1].x, vec![60.0, 3.0]);
    }

    #[test]
    fn single_arm_rejected() {
        let err = Dataset::new(vec![
            subject(0, 0.0, true, 1.0, true),
            subject(1, 0.0, true, 2.0, true),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::EmptyArm { arm: 0, .. }));
    }

    #[test]
    fn trim_keeps_interior_subject() {
        let ds = Dataset::new(vec![
            subject(0, 0.0, true, 1.0, true),
            subject(1, 0.0, false, 1.0, true),
            subject(2, 0.0, true, 1.0, true),
        ])
        .unwrap();
        let err = trim(&ds, &[0.05, 0.5, 0.95], 0.1, 0.9).unwrap_err();
        // only subject 1 survives, which empties the treated arm
        assert!(err.to_string().contains("widen"), "{err}");

        let ds = toy();
        let (t, report) = trim(&ds, &[0.05, 0.5, 0.6, 0.3, 0.95], 0.1, 0.9).unwrap();
        assert_eq!(report.kept_ids, vec![1, 2, 3]);
        assert_eq!(report.dropped_ids, vec![0, 4]);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn trim_full_bounds_is_identity() {
        let ds = toy();
        let (t, report) = trim(&ds, &[0.05, 0.5, 0.95, 0.3, 0.6], 0.0, 1.0).unwrap();
        assert_eq!(t, ds);
        assert!(report.dropped_ids.is_empty());
    }

    #[test]
    fn risk_sets_by_enumeration() {
        let ds = toy();
        assert_eq!(ds.risk_set_size(0.0, None), 5);
        assert_eq!(ds.risk_set_size(5.1, None), 0);
        // times 2,1,3,5,4; median 3 -> subjects with time >= 3: 3,5,4
        assert_eq!(ds.risk_set_size(3.0, None), 3);
        assert_eq!(ds.risk_set_size(3.0, Some(true)), 1);
        assert_eq!(ds.risk_set_size(3.0, Some(false)), 2);
    }

    #[test]
    fn counting_process_jumps_once() {
        let s = subject(0, 0.0, true, 2.0, true);
        assert_eq!(s.counting(1.999), 0);
        assert_eq!(s.counting(2.0), 1);
        assert!(s.at_risk(2.0));
        assert!(!s.at_risk(2.0001));
        let c = subject(1, 0.0, true, 2.0, false);
        assert_eq!(c.counting(10.0), 0);
    }

    #[test]
    fn bad_trim_bounds() {
        let ds = toy();
        assert!(trim(&ds, &[0.5; 5], 0.6, 0.4).is_err());
        assert!(trim(&ds, &[0.5; 4], 0.1, 0.9).is_err());
    }
}
