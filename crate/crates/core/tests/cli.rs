mod common;

use std::path::Path;
use std::process::{Command, Output};

use hazmatch::cli::EstimateOutput;
use hazmatch::inference::{Estimator, Method};

fn hazmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazmatch")).args(args).output().unwrap()
}

fn estimate(data: &Path, out: &Path, extra: &[&str]) -> Vec<u8> {
    let mut args = vec![
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--estimators",
        "nai,reg,psm",
        "--B",
        "100",
        "--seed",
        "11",
    ];
    args.extend_from_slice(extra);
    let o = hazmatch(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn estimate_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_fixture(dir.path(), 300, 5);
    let a = estimate(&data, &dir.path().join("a.json"), &["--threads", "1"]);
    let b = estimate(&data, &dir.path().join("b.json"), &["--threads", "4"]);
    assert_eq!(a, b);

    let out: EstimateOutput = serde_json::from_slice(&a).unwrap();
    let rep = &out.report;
    assert_eq!(rep.estimator, Estimator::Psm);
    assert_eq!(rep.seed, 11);
    assert_eq!(rep.b, 100);
    assert_eq!(rep.methods.len(), 4);
    assert_eq!(rep.estimators[&Estimator::Naive].methods.len(), 1);
    for m in rep.methods.values() {
        assert!(m.ci_low < rep.beta_hat && rep.beta_hat < m.ci_high);
    }
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    for key in ["beta_hat", "hr", "methods", "alpha", "seed", "B", "version", "config", "input"] {
        assert!(json.get(key).is_some(), "missing `{key}`");
    }
    assert!(json["methods"].get("double-rsp").is_some());
}

#[test]
fn trimming_drops_subjects_and_reports_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_fixture(dir.path(), 300, 6);
    let bytes = estimate(
        &data,
        &dir.path().join("t.json"),
        &["--trim", "0.2,0.8", "--methods", "software,asymp"],
    );
    let out: EstimateOutput = serde_json::from_slice(&bytes).unwrap();
    let t = out.input.trim.expect("trim report");
    assert_eq!(t.kept_ids.len() + t.dropped_ids.len(), 300);
    assert!(!t.dropped_ids.is_empty());
    assert_eq!(out.report.diagnostics.n, t.kept_ids.len());
    assert_eq!(
        out.report.methods.keys().copied().collect::<Vec<_>>(),
        vec![Method::Software, Method::Asymptotic]
    );
}

#[test]
fn errors_exit_nonzero_with_a_tagged_message() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_fixture(dir.path(), 100, 7);
    let o = hazmatch(&["estimate", "--data", data.to_str().unwrap(), "--col-w", "treat"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error[missing_column]"), "{err}");

    let o = hazmatch(&["estimate", "--data", data.to_str().unwrap(), "--B", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]"));
}

#[test]
fn dump_matches_writes_one_row_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_fixture(dir.path(), 120, 8);
    let o = hazmatch(&["dump-matches", "--data", data.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "id,x1,x2,w,u0,delta0,source0,u1,delta1,source1,k,weight"
    );
    assert_eq!(lines.count(), 120);
}

#[test]
fn simulate_writes_table_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sim.csv");
    let o = hazmatch(&[
        "simulate",
        "--out",
        csv.to_str().unwrap(),
        "--n",
        "200",
        "--reps",
        "6",
        "--methods",
        "software,asymp",
        "--c-max",
        "1.5",
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("beta0,ps_spec,estimator,method,weak_bias_x100"));
    let log: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sim.json")).unwrap()).unwrap();
    assert_eq!(log["runs"][0]["replicates"].as_array().unwrap().len(), 6);
    assert_eq!(log["runs"][0]["table"]["config"]["n"], 200);
}
