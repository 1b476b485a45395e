use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Six months with one step well inside the training block.
const SMALL: &str = r#"{"start":"2022-01-01T00:00:00","end":"2022-06-30T23:00:00",
    "events":[{"at":"2022-04-15T00:00:00","kind":"sudden","jump":2.0}],"seed":3}"#;
const SMALL_STATIONARY: &str = r#"{"start":"2022-01-01T00:00:00","end":"2022-06-30T23:00:00","events":[],"seed":3}"#;

fn driftcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftcast"))
        .current_dir(dir)
        .env_remove("DRIFTCAST_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = driftcast(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_data(dir: &TempDir, config: &str) -> &'static str {
    fs::write(dir.path().join("c.json"), config).unwrap();
    ok(dir.path(), &["synth", "--config", "c.json", "--out", "s.csv"]);
    "s.csv"
}

#[test]
fn synth_default_span_and_sidecar() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--seed", "42", "--out", "s.csv"]);
    let text = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 35_064 + 1);
    assert!(text.starts_with("timestamp,interest_rate\n2020-01-01T00:00:00,"));
    let meta = json(dir.path().join("s.json"));
    assert_eq!(meta["n"], 35_064);
    assert_eq!(meta["config"]["seed"], 42);
    assert_eq!(meta["events"][1]["index"], 27_048);
}

#[test]
fn synth_is_byte_reproducible_and_reads_seed_from_env() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["synth", "--seed", "7", "--out", "a.csv"]);
    ok(dir.path(), &["synth", "--seed", "7", "--out", "b.csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_driftcast"))
        .current_dir(dir.path())
        .env("DRIFTCAST_SEED", "7")
        .args(["synth", "--out", "c.csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv"), read("c.csv"));
    assert_eq!(json(dir.path().join("c.json"))["config"]["seed"], 7);
}

#[test]
fn synth_rejects_inverted_range() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"start":"2024-01-01T00:00:00","end":"2020-01-01T00:00:00"}"#).unwrap();
    let out = driftcast(dir.path(), &["synth", "--config", "bad.json", "--out", "s.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("must precede"));
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn detect_finds_the_injected_step() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    ok(dir.path(), &["detect", "--data", data, "--detect-on", "target", "--out", "seg.json", "--plot", "seg.svg"]);
    let truth = json(dir.path().join("s.json"))["events"][0]["index"].as_u64().unwrap();
    let seg = json(dir.path().join("seg.json"));
    let cps: Vec<u64> = seg["changepoints"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(cps.iter().any(|&c| c.abs_diff(truth) <= 24), "truth {truth}, got {cps:?}");
    let svg = fs::read_to_string(dir.path().join("seg.svg")).unwrap();
    assert_eq!(svg.matches("class=\"changepoint\"").count(), cps.len());
}

#[test]
fn detect_on_constant_column_is_empty() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("timestamp,flat\n");
    for h in 0..200 {
        csv += &format!("2022-01-{:02}T{:02}:00:00,1.5\n", 1 + h / 24, h % 24);
    }
    fs::write(dir.path().join("flat.csv"), csv).unwrap();
    ok(dir.path(), &["detect", "--data", "flat.csv", "--columns", "flat", "--out", "seg.json"]);
    assert_eq!(json(dir.path().join("seg.json"))["changepoints"], serde_json::json!([]));
}

#[test]
fn detect_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    assert_eq!(code(&driftcast(dir.path(), &["detect", "--data", data, "--columns", "nope", "--out", "x.json"])), 2);
    assert_eq!(code(&driftcast(dir.path(), &["detect", "--data", "absent.csv", "--out", "x.json"])), 4);
    assert_eq!(code(&driftcast(dir.path(), &["detect", "--data", data, "--beta", "-1", "--out", "x.json"])), 2);
    assert_eq!(code(&driftcast(dir.path(), &["detect", "--data", data, "--out", "no/such/dir/x.json"])), 4);
}

#[test]
fn detect_per_column_reports_union() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    ok(dir.path(), &["detect", "--data", data, "--columns", "interest_rate", "--per-column", "--beta", "50", "--out", "seg.json"]);
    let v = json(dir.path().join("seg.json"));
    assert_eq!(v["union"], v["columns"]["interest_rate"]["changepoints"]);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&driftcast(dir.path(), &["run", "--bogus"])), 2);
    assert_eq!(code(&driftcast(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&driftcast(dir.path(), &["run", "--data", "x.csv", "--model", "svm", "--out", "r.json"])), 2);
}

#[test]
fn retrain_run_writes_report_and_artifacts_reproducibly() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    let args = ["run", "--data", data, "--model", "lasso", "--strategy", "retrain", "--seed", "1", "--out"];
    ok(dir.path(), &[&args[..], &["a.json"]].concat());
    ok(dir.path(), &[&args[..], &["b.json"]].concat());
    let report = json(dir.path().join("a.json"));
    assert!(!report["segmentation"]["changepoints"].as_array().unwrap().is_empty());
    assert!(report.get("fallback").is_none());
    assert_eq!(report["eval"]["provenance"]["strategy"], "drift_retrain");
    for suffix in ["json", "model.json", "predictions.csv", "predictions.svg", "cv.csv", "cv.svg"] {
        let read = |stem: &str| fs::read(dir.path().join(format!("{stem}.{suffix}"))).unwrap();
        assert_eq!(read("a"), read("b"), "{suffix} differs between identical runs");
    }
    let preds = fs::read_to_string(dir.path().join("a.predictions.csv")).unwrap();
    assert!(preds.starts_with("timestamp,actual,predicted\n"));
}

#[test]
fn retrain_on_stationary_data_flags_fallback() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL_STATIONARY);
    ok(dir.path(), &["run", "--data", data, "--model", "lasso", "--strategy", "retrain", "--out", "r.json"]);
    let report = json(dir.path().join("r.json"));
    assert_eq!(report["fallback"], "no_changepoints");
}

#[test]
fn diverging_mlp_exits_with_numeric_code() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    let out = driftcast(dir.path(), &["run", "--data", data, "--model", "mlp", "--learning-rate", "1e200", "--max-epochs", "3", "--out", "r.json"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn compare_four_runs_into_table_and_three_panels() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    fs::create_dir(dir.path().join("reports")).unwrap();
    for model in ["mlp", "lasso"] {
        for strategy in ["baseline", "retrain"] {
            let out = format!("reports/{model}_{strategy}.report.json");
            let mut args = vec!["run", "--data", data, "--model", model, "--strategy", strategy, "--out", &out];
            args.extend(["--max-epochs", "10", "--hidden", "16,16"].iter().filter(|_| model == "mlp"));
            ok(dir.path(), &args);
        }
    }
    ok(dir.path(), &["compare", "--reports", "reports/lasso_retrain.report.json", "--out", "single.csv"]);
    let single = fs::read_to_string(dir.path().join("single.csv")).unwrap();
    assert_eq!(single.lines().count(), 2);
    assert!(single.lines().nth(1).unwrap().ends_with(",,,,,,"), "{single}");

    ok(dir.path(), &["compare", "--reports", "reports/*.report.json", "--out", "cmp.csv", "--plot", "cmp.svg"]);
    let table = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.lines().any(|l| l.starts_with("lasso,drift_retrain,")));
    let svg = fs::read_to_string(dir.path().join("cmp.svg")).unwrap();
    assert_eq!(svg.matches("class=\"panel\"").count(), 3);
    assert_eq!(svg.matches("class=\"bar\"").count(), 12);
    ok(dir.path(), &["plot", "--kind", "comparison", "--input", "cmp.csv", "--out", "again.svg"]);
    assert_eq!(fs::read_to_string(dir.path().join("again.svg")).unwrap(), svg);
}

#[test]
fn compare_rejects_reports_from_different_data() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    ok(dir.path(), &["run", "--data", data, "--model", "lasso", "--out", "a.json"]);
    ok(dir.path(), &["synth", "--config", "c.json", "--seed", "99", "--out", "other.csv"]);
    ok(dir.path(), &["run", "--data", "other.csv", "--model", "lasso", "--out", "b.json"]);
    let out = driftcast(dir.path(), &["compare", "--reports", "[ab].json", "--out", "cmp.csv"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&driftcast(dir.path(), &["compare", "--reports", "none*.json", "--out", "cmp.csv"])), 2);
}

#[test]
fn plot_series_overlays_segmentation() {
    let dir = TempDir::new().unwrap();
    let data = small_data(&dir, SMALL);
    ok(dir.path(), &["detect", "--data", data, "--beta", "100", "--out", "seg.json"]);
    ok(dir.path(), &["plot", "--kind", "series", "--input", data, "--segmentation", "seg.json", "--out", "p.svg"]);
    let n = json(dir.path().join("seg.json"))["changepoints"].as_array().unwrap().len();
    assert!(n >= 1);
    let svg = fs::read_to_string(dir.path().join("p.svg")).unwrap();
    assert_eq!(svg.matches("class=\"changepoint\"").count(), n);
    assert!(svg.contains("2022-01-01T00:00:00"));
}
