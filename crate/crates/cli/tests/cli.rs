use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn seqstein(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqstein"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg("1")
        .output()
        .expect("binary runs")
}

fn small_config(observable: Value) -> Value {
    json!({
        "schema_version": 1,
        "name": "cli-smoke",
        "system": {
            "family": {"kind": "lsv"},
            "mode": {
                "kind": "random",
                "driver": {"kind": "iid", "distribution": {"kind": "uniform", "lo": 0.0, "hi": 0.25}, "seed": 3}
            },
            "beta_star": 0.25
        },
        "observable": {"components": [observable]},
        "n_grid": [16, 32, 64, 128],
        "samples": 2000,
        "metric": "wasserstein1d",
        "normalization": "self_norming",
        "rate_model": "pure_power",
        "seed": 5
    })
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn stein_check_builtin_family_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqstein(&["stein-check", "--dim", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("stein_check.csv")).unwrap();
    assert!(csv.starts_with("config_hash,h,dim,max_residual,bound_margin,pass"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "stein-check");
}

#[test]
fn rates_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({"kind": "identity"})));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = seqstein(&["rates", "--deterministic", "--config", &cfg], out);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    }
    for file in ["rates.csv", "rate_fit.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let rows = fs::read_to_string(a.join("rates.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
}

#[test]
fn seed_flag_changes_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({"kind": "identity"})));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    seqstein(&["simulate", "--deterministic", "--config", &cfg], &a);
    seqstein(&["simulate", "--deterministic", "--seed", "6", "--config", &cfg], &b);
    assert_ne!(
        fs::read(a.join("simulate.csv")).unwrap(),
        fs::read(b.join("simulate.csv")).unwrap()
    );
}

#[test]
fn degenerate_observable_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({"kind": "constant", "value": 1.5})));
    let out = seqstein(&["rates", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N = 16"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");

    let missing = seqstein(&["rates", "--config", "/nonexistent/config.json"], &out_dir);
    assert_eq!(missing.status.code(), Some(2));

    let mut cfg = small_config(json!({"kind": "identity"}));
    cfg["unexpected"] = json!(true);
    let path = write_config(dir.path(), &cfg);
    assert_eq!(seqstein(&["rates", "--config", &path], &out_dir).status.code(), Some(2));

    let mut cfg = small_config(json!({"kind": "identity"}));
    cfg["n_grid"] = json!([64, 32, 128, 256]);
    let path = write_config(dir.path(), &cfg);
    assert_eq!(seqstein(&["rates", "--config", &path], &out_dir).status.code(), Some(2));

    let path = write_config(dir.path(), &small_config(json!({"kind": "identity"})));
    let out = seqstein(&["stein-check", "--config", &path], &out_dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stein_check"));

    assert_eq!(seqstein(&["stein-check"], &out_dir).status.code(), Some(2));
}
