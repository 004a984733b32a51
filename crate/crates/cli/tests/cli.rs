use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = r#"{
  "environment": {
    "transmitters": [{"location": [20.0, 30.0], "power_db": 10.0, "psd_coefficients": [1.0, 0.5, 0.2]}],
    "path_loss_exponent": 2.0,
    "shadowing": {"sigma2_s": 4.0, "delta_c": 10.0},
    "fading": {"sigma2_f": 0.0},
    "seed": 1
  },
  "grid": {"region": {"lower": [0.0, 0.0], "upper": [50.0, 50.0]}, "counts": [12, 12]},
  "measurements": {"count": 30, "noise_variance": 0.5},
  "quantization": {
    "basis": {"f_min": 0.0, "f_max": 1.0, "frequencies": 41, "centers": [0.2, 0.5, 0.8], "bandwidth": 0.25, "rolloff": 0.5},
    "breakpoints": [0.0, 0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01],
    "filter_seed": 4,
    "branches": 2
  }
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radiomap"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("scn.json"), SCENARIO).unwrap();
    dir
}

fn metrics(dir: &Path, out: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(out).join("metrics.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic() {
    let d = setup();
    for out in ["a", "b"] {
        let o = run(d.path(), &["--scenario", "scn.json", "--out", out, "--seed", "5", "simulate"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = files(&d.path().join("a"));
    assert_eq!(a, files(&d.path().join("b")));
    let names: Vec<_> = a.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["measurements.csv", "metrics.json", "quantized.csv", "truth.csv"]);
    let m = metrics(d.path(), "a");
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["quantized_measurements"], 60);
}

#[test]
fn estimators_report_metrics() {
    let d = setup();
    for (name, spec) in [
        ("krr", r#"{"estimator": {"name": "krr", "sigma": 8, "lambda": 0.001}, "seed": 1}"#),
        ("kriging", r#"{"estimator": {"name": "kriging", "mean": "path_loss"}, "seed": 1}"#),
        ("friis", r#"{"estimator": {"name": "friis_ls"}, "seed": 1}"#),
        ("completion", r#"{"estimator": {"name": "completion", "lambda": 1.0}, "seed": 1}"#),
        ("svr", r#"{"estimator": {"name": "interval_svr", "sigma": 10, "lambda": 1e-6}, "seed": 1}"#),
    ] {
        fs::write(d.path().join(format!("{name}.json")), spec).unwrap();
        let o = run(d.path(), &["--scenario", "scn.json", "--out", name, "estimate", "--spec", &format!("{name}.json")]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let m = metrics(d.path(), name);
        assert_eq!(m["command"], "estimate");
        let err = m.get("mse").or(m.get("psd_mse")).unwrap().as_f64().unwrap();
        assert!(err.is_finite() && err >= 0.0, "{name}");
    }
}

#[test]
fn estimate_from_measurement_file() {
    let d = setup();
    assert!(run(d.path(), &["--scenario", "scn.json", "--out", "sim", "simulate"]).status.success());
    fs::write(d.path().join("k.json"), r#"{"estimator": {"name": "kriging"}, "seed": 1}"#).unwrap();
    let o = run(
        d.path(),
        &["--scenario", "scn.json", "--out", "est", "estimate", "--spec", "k.json", "--measurements", "sim/measurements.csv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(d.path(), &["--out", "ev", "eval", "--estimate", "est/estimate.csv", "--truth", "sim/truth.csv"]);
    assert!(o.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["mse"], metrics(d.path(), "est")["mse"]);
}

#[test]
fn survey_writes_trajectory() {
    let d = setup();
    fs::write(d.path().join("s.json"), r#"{"budget": 10, "travel_weight": 0.01, "start": [0, 0], "seed": 2}"#).unwrap();
    let o = run(d.path(), &["--scenario", "scn.json", "--out", "s", "survey", "--spec", "s.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(d.path().join("s/trajectory.csv")).unwrap();
    assert!(t.starts_with("step,x,y,z,mse,total_variance\n"));
    assert_eq!(t.lines().count(), 11);
}

#[test]
fn admm_exit_codes() {
    let d = setup();
    let spec = |rounds: usize| {
        format!(
            r#"{{"agents": 3, "topology": {{"kind": "ring"}}, "dim": 2, "rows": 4, "rho": 1.0,
                "regularizer": {{"kind": "squared_norm", "lambda_r": 0.1}}, "tol": 1e-9, "max_rounds": {rounds}, "seed": 1}}"#
        )
    };
    fs::write(d.path().join("ok.json"), spec(5000)).unwrap();
    fs::write(d.path().join("short.json"), spec(2)).unwrap();
    let o = run(d.path(), &["--out", "ok", "admm", "--spec", "ok.json"]);
    assert_eq!(o.status.code(), Some(0));
    let m = metrics(d.path(), "ok");
    assert_eq!(m["messages_on_edges_only"], true);
    assert!(m["max_error_vs_centralized"].as_f64().unwrap() < 1e-4);
    let o = run(d.path(), &["--out", "short", "admm", "--spec", "short.json"]);
    assert_eq!(o.status.code(), Some(3));
    let csv = fs::read_to_string(d.path().join("short/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn validation_errors_exit_2() {
    let d = setup();
    assert_eq!(run(d.path(), &["figures", "fig9"]).status.code(), Some(2));
    fs::write(d.path().join("bad.json"), r#"{"estimator": {"name": "dnn"}, "seed": 1}"#).unwrap();
    let o = run(d.path(), &["--scenario", "scn.json", "estimate", "--spec", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(d.path(), &["simulate"]).status.code(), Some(2));
    fs::write(
        d.path().join("disc.json"),
        r#"{"agents": 3, "topology": {"kind": "edges", "edges": [[0, 1]]}, "dim": 2, "rows": 4, "rho": 1.0,
            "regularizer": {"kind": "none"}, "tol": 1e-9, "max_rounds": 10, "seed": 1}"#,
    )
    .unwrap();
    assert_eq!(run(d.path(), &["admm", "--spec", "disc.json"]).status.code(), Some(2));
}

#[test]
fn figures_are_byte_identical() {
    let d = setup();
    for out in ["a", "b"] {
        assert!(run(d.path(), &["--out", out, "--seed", "3", "figures", "all"]).status.success());
    }
    let a = files(&d.path().join("a"));
    assert_eq!(a.len(), 11);
    assert_eq!(a, files(&d.path().join("b")));
    let m = metrics(d.path(), "a");
    assert_eq!(m["figures"]["fig3"]["expansion_terms"], 5);
    let f1 = m["figures"]["fig1"]["test_mse"].as_f64().unwrap();
    let f2 = m["figures"]["fig2"]["test_mse"].as_f64().unwrap();
    assert!(f1 < f2);
}
