mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nonlocal_flow::output::{read_csv, sidecar_path};
use nonlocal_flow::scenario::run_scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonlocal-flow"))
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("NONLOCAL_FLOW_THREADS", n),
        None => cmd.env_remove("NONLOCAL_FLOW_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

const TWO_LEVEL: &str = r#"{"scenarios": [
  {"name": "two_level",
   "initial_datum": {"atoms": [{"value": 1.5, "weight": 0.5}, {"value": 3.0, "weight": 0.5}]},
   "lyapunov": ["linear", "square"],
   "checks": {"characteristic": false}}
]}"#;

#[test]
fn run_writes_series_sidecar_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_LEVEL);
    let out = dir.path().join("out");
    let o = run(&["run", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let series = read_csv(&out.join("two_level.csv")).unwrap();
    assert_eq!(series.header, ["t", "lambda", "mass", "E_linear", "E_square"]);
    let snap = read_csv(&sidecar_path(&out.join("two_level.csv"))).unwrap();
    assert_eq!(snap.header, ["atom_index", "value", "weight"]);

    // the CSV reproduces an in-process run bit for bit
    let parsed = nonlocal_flow::config::parse_config(TWO_LEVEL).unwrap();
    let rec = run_scenario(&parsed[0]).record.unwrap();
    assert_eq!(series.rows(), rec.times.len());
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    assert!(same(series.column("t").unwrap(), &rec.times));
    assert!(same(series.column("lambda").unwrap(), &rec.lambda_series));
    let last: Vec<f64> = rec.last().values().collect();
    assert!(same(snap.column("value").unwrap(), &last));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["scenarios"][0]["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["check"] != "characteristic"));
    assert!(checks.iter().all(|c| c["claim"].as_str().is_some_and(|s| !s.is_empty())));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::scenarios_path();
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["run", cfg, "--out", a.to_str().unwrap()], Some("1")).status.code(), Some(0));
    assert_eq!(run(&["run", cfg, "--out", b.to_str().unwrap()], Some("4")).status.code(), Some(0));
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 10 + 1);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn check_fails_on_data_outside_every_hypothesis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenarios": [{"name": "straddle",
            "initial_datum": {"atoms": [{"value": -1.0, "weight": 0.5}, {"value": 0.5, "weight": 0.5}]}}]}"#,
    );
    let o = run(&["check", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL straddle"), "{stdout}");
}

#[test]
fn schema_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenarios": [{"name": "x", "initial_datum": {"atoms": [{"value": 2.0, "weight": -1}]}}]}"#,
    );
    let o = run(&["check", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("scenarios[0].initial_datum.atoms[0].weight"), "{stderr}");

    assert_eq!(run(&["check", "/nonexistent/config.json"], None).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(run(&[], None).status.code(), Some(2));
}

#[test]
fn predict_prints_closed_form_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_LEVEL);
    let o = run(&["predict", &cfg], None);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = &v["scenarios"][0]["prediction"];
    assert_eq!(p["kind"], "h1_step");
    assert_eq!(p["lambda_infinity"], 2.25);
    assert!(v["scenarios"][0]["termination"].is_null());
}
