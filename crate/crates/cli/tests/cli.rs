//! End-to-end tests of the command-line interface: golden detect fixture,
//! topology round-trip, error diagnostics, and schema sanity of the bench
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridline"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn detect_reproduces_golden_outcome_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("outcome.json");
    run_ok(bin()
        .args(["detect", "--rho", "0.04", "--alpha", "0.01"])
        .arg("--stream")
        .arg(fixture("golden_stream.csv"))
        .arg("--model")
        .arg(fixture("golden_model.json"))
        .arg("--out")
        .arg(&out_path));
    let got = fs::read(&out_path).unwrap();
    let want = fs::read(fixture("golden_outcome.json")).unwrap();
    assert_eq!(got, want, "detect output drifted from the committed fixture");
}

#[test]
fn topology_json_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    run_ok(bin().args(["gen-grid", "--kind", "loopy", "--size", "15", "--seed", "4"]).arg("--out").arg(&a));
    // simulate reads the file back through the same loader; identical
    // generation must produce identical bytes
    let b = tmp.path().join("b.json");
    run_ok(bin().args(["gen-grid", "--kind", "loopy", "--size", "15", "--seed", "4"]).arg("--out").arg(&b));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(parsed["buses"], 15);
    assert_eq!(parsed["slack"], 0);
    assert!(parsed["branches"].as_array().unwrap().len() >= 14);
}

#[test]
fn simulate_then_detect_finds_the_planted_outage() {
    let tmp = tempfile::tempdir().unwrap();
    let top = tmp.path().join("top.json");
    let stream = tmp.path().join("stream.csv");
    let truth = tmp.path().join("truth.json");
    run_ok(bin().args(["gen-grid", "--kind", "loopy", "--size", "8", "--seed", "7"]).arg("--out").arg(&top));
    run_ok(bin()
        .args(["simulate", "--outage", "2", "--seed", "3"])
        .arg("--topology")
        .arg(&top)
        .arg("--out")
        .arg(&stream)
        .arg("--truth")
        .arg(&truth));

    let truth_val: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&truth).unwrap()).unwrap();
    let lambda = truth_val["lambda"].as_u64().unwrap();
    let model = tmp.path().join("model.json");
    fs::write(
        &model,
        serde_json::to_string(&serde_json::json!({
            "g": truth_val["g"],
            "f": truth_val["f"],
        }))
        .unwrap(),
    )
    .unwrap();

    let outcome_path = tmp.path().join("outcome.json");
    run_ok(bin()
        .args(["detect", "--alpha", "0.01"])
        .arg("--stream")
        .arg(&stream)
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(&outcome_path));
    let outcome: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&outcome_path).unwrap()).unwrap();
    let tau = outcome["tau"].as_u64().expect("alarm fires");
    assert!(tau >= lambda, "false alarm: tau {tau} < lambda {lambda}");
    assert!(tau <= lambda + 50, "excessive delay: tau {tau}, lambda {lambda}");
    let trace = outcome["trace"].as_array().unwrap();
    assert_eq!(trace.len() as u64, tau, "trace stops at the declaration");
    let threshold = outcome["threshold"].as_f64().unwrap();
    for v in &trace[..trace.len() - 1] {
        assert!(v.as_f64().unwrap() <= threshold, "trace crossed before tau");
    }
}

#[test]
fn unknown_flag_exits_with_code_2() {
    let out = bin().args(["detect", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_exits_with_code_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_stream_names_row_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("bad.csv");
    fs::write(&stream, "1,2\n0.1,0.2\n0.3,oops\n").unwrap();
    let out = bin()
        .args(["detect"])
        .arg("--stream")
        .arg(&stream)
        .arg("--model")
        .arg(fixture("golden_model.json"))
        .arg("--out")
        .arg(tmp.path().join("o.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 3"), "diagnostic should name the row: {msg}");
    assert!(msg.contains("column 2"), "diagnostic should name the column: {msg}");
    assert!(msg.contains("oops"), "diagnostic should quote the value: {msg}");
}

#[test]
fn malformed_model_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model.json");
    // sigma is 2x2 but mu is 3-dimensional
    fs::write(&model, r#"{"g": {"mu": [0,0,0], "sigma": [[1,0],[0,1]]}}"#).unwrap();
    let out = bin()
        .args(["detect"])
        .arg("--stream")
        .arg(fixture("golden_stream.csv"))
        .arg("--model")
        .arg(&model)
        .arg("--out")
        .arg(tmp.path().join("o.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("sigma"), "diagnostic should name the field: {msg}");
}

#[test]
fn simulate_rejects_nonexistent_outage_branch() {
    let tmp = tempfile::tempdir().unwrap();
    let top = tmp.path().join("top.json");
    run_ok(bin().args(["gen-grid", "--size", "5", "--seed", "1"]).arg("--out").arg(&top));
    let out = bin()
        .args(["simulate", "--outage", "99"])
        .arg("--topology")
        .arg(&top)
        .arg("--out")
        .arg(tmp.path().join("s.csv"))
        .arg("--truth")
        .arg(tmp.path().join("t.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("99"), "diagnostic should name the branch: {msg}");
}

#[test]
fn bench_single_trial_emits_schema_valid_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bench.toml");
    fs::write(
        &config,
        r#"
rho = 0.04
alphas = [0.05]
trials = 1
detector = "f-known"

[scenario.grid]
kind = "loopy"
size = 6
seed = 11
outage = [3]
"#,
    )
    .unwrap();
    let report_path = tmp.path().join("report.json");
    let csv_path = tmp.path().join("report.csv");
    run_ok(bin()
        .args(["bench"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&report_path)
        .arg("--csv")
        .arg(&csv_path));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let per_alpha = report["per_alpha"].as_array().unwrap();
    assert_eq!(per_alpha.len(), 1);
    assert_eq!(per_alpha[0]["alpha"], 0.05);
    assert_eq!(per_alpha[0]["trials"], 1);
    assert_eq!(per_alpha[0]["records"].as_array().unwrap().len(), 1);
    let csv_text = fs::read_to_string(&csv_path).unwrap();
    assert!(csv_text.starts_with("alpha,trials,avg_delay,false_alarm_rate"));
    assert_eq!(csv_text.lines().count(), 2);
}

#[test]
fn bench_accepts_json_config_and_known_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bench.json");
    fs::write(
        &config,
        serde_json::to_string(&serde_json::json!({
            "rho": 0.04,
            "alphas": [0.1],
            "trials": 3,
            "detector": "f-known",
            "scenario": {
                "known": {
                    "g": {"mu": [0.0], "sigma": [[0.5]]},
                    "f": {"mu": [1.0], "sigma": [[0.2]]}
                }
            }
        }))
        .unwrap(),
    )
    .unwrap();
    let report_path = tmp.path().join("report.json");
    run_ok(bin().args(["bench"]).arg("--config").arg(&config).arg("--out").arg(&report_path));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    // scalar known scenario has no localization ground truth
    assert!(report["per_alpha"][0]["localization_accuracy"].is_null());
}

#[test]
fn bench_is_reproducible_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bench.toml");
    fs::write(
        &config,
        r#"
rho = 0.04
alphas = [0.05, 0.01]
trials = 5
detector = "f-known"
master_seed = 42

[scenario.grid]
kind = "radial"
size = 6
seed = 2
outage = [4]
"#,
    )
    .unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    run_ok(bin().args(["bench"]).arg("--config").arg(&config).arg("--out").arg(&a));
    run_ok(bin().args(["bench"]).arg("--config").arg(&config).arg("--out").arg(&b));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bench_rejects_bad_outage_branch_with_field_name() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bench.toml");
    fs::write(
        &config,
        r#"
rho = 0.04
alphas = [0.05]
detector = "f-known"

[scenario.grid]
kind = "radial"
size = 5
outage = [99]
"#,
    )
    .unwrap();
    let out = bin()
        .args(["bench"])
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("scenario.grid.outage"), "should name the field: {msg}");
}

#[test]
fn matfun_bench_reports_accuracy_and_timing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("matfun.json");
    run_ok(bin()
        .args(["matfun-bench", "--dim", "6", "--matrices", "20", "--levels", "4", "--levels", "12"])
        .arg("--out")
        .arg(&out_path));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    // accuracy improves with the truncation level
    let e4 = levels[0]["exp_max_rel_err"].as_f64().unwrap();
    let e12 = levels[1]["exp_max_rel_err"].as_f64().unwrap();
    assert!(e12 < e4, "exp error should shrink with k: {e4} -> {e12}");
    assert!(report["exact_exp_ns_per_call"].as_f64().unwrap() > 0.0);
}
