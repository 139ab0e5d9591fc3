use std::process::Command;

use serde_json::Value;

fn retrotube() -> Command {
    Command::new(env!("CARGO_BIN_EXE_retrotube"))
}

#[test]
fn trace_worked_example_as_json() {
    let out = retrotube()
        .args(["trace", "--y-in", "0.9", "--slope", "0.2", "--epsilon", "0.3", "--format", "json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let term = &v["terminal"];
    assert_eq!(term["Q"], 1);
    assert_eq!(term["reversed"], true);
    assert!((term["y_out"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    let manifest: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(manifest["subcommand"], "trace");
}

#[test]
fn unknown_subcommand_exits_with_config_status() {
    let out = retrotube().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown subcommand"));
}

#[test]
fn config_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "subcommand = \"compare\"\nsamples = 10\nsamplez = 3\n").unwrap();
    let out = retrotube().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("samplez"), "{err}");

    std::fs::write(&cfg, "subcommand = \"compare\"\nepsilon = 1.5\n").unwrap();
    let out = retrotube().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("epsilon"), "{err}");
}

#[test]
fn trace_cutoff_exits_with_budget_status() {
    // A periodic orbit that never returns to x = 0.
    let out = retrotube()
        .args(["trace", "--y-in", "0.9", "--slope=-0.2", "--epsilon", "0.3", "--max-events", "50"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn manifest_reruns_reproduce_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("cmp.csv");
    let status = retrotube()
        .args(["compare", "--epsilon", "0.02", "--samples", "5000", "--k-max", "40", "--seed", "7", "--deterministic"])
        .arg("--out")
        .arg(&first)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&first).unwrap();
    assert!(csv.starts_with("k,p_dyn,dyn_ci_low,dyn_ci_high,p_lat,lat_ci_low,lat_ci_high\n"));
    assert!(csv.lines().any(|l| l.starts_with("# tv_distance=")));

    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("cmp.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["discards"]["dynamical"].is_object());

    let replay = dir.path().join("replay.toml");
    std::fs::write(&replay, manifest["config_toml"].as_str().unwrap()).unwrap();
    let second = dir.path().join("again.csv");
    let status = retrotube().arg("--config").arg(&replay).arg("--out").arg(&second).status().unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&second).unwrap(), csv.as_bytes());
    let again: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("again.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(again["seed"], 7);
}

#[test]
fn exitstats_writes_rows_per_window_and_side_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exits.csv");
    let status = retrotube()
        .args(["exitstats", "--epsilon-grid", "0.1,0.05", "--samples", "500", "--k-max", "10", "--t-grid", "0,1,10"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
    let pmf = std::fs::read_to_string(dir.path().join("exits.q_pmf.csv")).unwrap();
    assert_eq!(pmf.lines().count(), 1 + 2 * 10);
    let cdf = std::fs::read_to_string(dir.path().join("exits.t_cdf.csv")).unwrap();
    assert_eq!(cdf.lines().count(), 1 + 2 * 3);
}

#[test]
fn bench_reports_both_paths() {
    let out = retrotube().args(["bench", "--epsilon", "1e-3", "--hits", "100000"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\nnaive,") && text.contains("\nfast,") && text.contains("# speedup="));
}
