use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"
samples_per_label = 40
epochs = 2
lstm_hidden = 4
hidden_nn = [4, 4]
"#;

fn ionreadout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionreadout")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.in.toml");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn generate_writes_every_sample_deterministically() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "");
    let mut copies = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = ok(ionreadout(&["generate", "--config", &config, "--out", out_dir.to_str().unwrap()]));
        let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["samples"], 8 * 40);
        assert_eq!(summary["mean_counts_per_channel"].as_object().unwrap().len(), 8);
        copies.push(fs::read_to_string(out_dir.join("dataset.jsonl")).unwrap());
    }
    assert_eq!(copies[0], copies[1]);
    assert_eq!(copies[0].lines().count(), 8 * 40 + 1);

    let other = dir.path().join("c");
    ok(ionreadout(&["generate", "--config", &config, "--out", other.to_str().unwrap(), "--seed-data", "99"]));
    assert_ne!(fs::read_to_string(other.join("dataset.jsonl")).unwrap(), copies[0]);
}

#[test]
fn fixed_threshold_run_reports_one_strategy() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    ok(ionreadout(&["run", "--config", &config, "--out", out_dir.to_str().unwrap(), "--strategies", "FT"]));
    let csv = fs::read_to_string(out_dir.join("reports.csv")).unwrap();
    let strategies: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(!strategies.is_empty());
    assert!(strategies.iter().all(|&s| s == "FT"), "{csv}");
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["average_fidelity"].as_object().unwrap().len(), 1);
    assert!(out_dir.join("ft.model.json").exists());
}

#[test]
fn identical_seeds_give_identical_reports() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "");
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        ok(ionreadout(&["run", "--config", &config, "--out", out_dir.to_str().unwrap(), "--strategies", "FT,NN", "--seed-train", "3"]));
        reports.push(fs::read_to_string(out_dir.join("reports.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn unknown_config_key_fails_with_json_error() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "bogus_key = 1\n");
    let out = ionreadout(&["run", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(err["error"].as_str().unwrap().contains("bogus_key"), "{err}");
    assert!(err["kind"].is_string());
}

#[test]
fn unknown_strategy_fails_with_json_error() {
    let dir = TempDir::new().unwrap();
    let out = ionreadout(&["run", "--out", dir.path().to_str().unwrap(), "--strategies", "FT,XYZ"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(err["error"].as_str().unwrap().contains("XYZ"), "{err}");
}

fn zero_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => *v = Value::from(0.0),
        Value::Array(items) => items.iter_mut().for_each(zero_floats),
        Value::Object(map) => map.values_mut().for_each(zero_floats),
        _ => {}
    }
}

#[test]
fn rnn_probe_and_sweep_write_curves() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "rnn_bins = 4\n");
    let out_dir = dir.path().join("out");
    let out_str = out_dir.to_str().unwrap();
    ok(ionreadout(&["run", "--config", &config, "--out", out_str, "--strategies", "RNN"]));
    let model = out_dir.join("rnn.model.json");

    ok(ionreadout(&["sweep-time", "--config", &config, "--out", out_str, "--model", model.to_str().unwrap()]));
    let sweep = fs::read_to_string(out_dir.join("sweep_time.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 5);
    assert!(sweep.lines().nth(1).unwrap().starts_with("0,0,0.125,"), "{sweep}");

    // an all-zero network predicts the uniform distribution, so every marginal is one half
    let mut json: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    zero_floats(&mut json["model"]);
    let zero = dir.path().join("zero.model.json");
    fs::write(&zero, json.to_string()).unwrap();
    ok(ionreadout(&["probe", "--config", &config, "--out", out_str, "--model", zero.to_str().unwrap()]));
    let probe = fs::read_to_string(out_dir.join("probe.csv")).unwrap();
    let rows: Vec<&str> = probe.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 4);
    for row in rows {
        let p: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((p - 0.5).abs() < 1e-12, "{row}");
    }
}

#[test]
fn probe_rejects_threshold_models() {
    let dir = TempDir::new().unwrap();
    let config = tiny_config(dir.path(), "");
    let out_str = dir.path().to_str().unwrap();
    ok(ionreadout(&["run", "--config", &config, "--out", out_str, "--strategies", "FT"]));
    let model = dir.path().join("ft.model.json");
    let out = ionreadout(&["probe", "--config", &config, "--out", out_str, "--model", model.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("not an RNN"), "{err}");
}
