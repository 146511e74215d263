use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn escape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_escape")).args(args).output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &TempDir, text: &str) -> String {
    let p = dir.path().join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn empty_hole_has_zero_rates() {
    let d = TempDir::new().unwrap();
    let out = escape(&["escape", "--preset", "empty-hole", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &summary(d.path())["result"];
    assert_eq!(r["spectral_rate"].as_f64().unwrap().abs(), 0.0);
    assert_eq!(r["mc_rate"].as_f64().unwrap(), 0.0);
}

#[test]
fn markov_hole_spectral_rate_is_log_two() {
    let d = TempDir::new().unwrap();
    escape(&["escape", "--preset", "markov-hole", "--out", d.path().to_str().unwrap()]);
    let rate = summary(d.path())["result"]["spectral_rate"].as_f64().unwrap();
    assert!((rate - 2f64.ln()).abs() < 1e-6, "{rate}");
}

#[test]
fn malformed_config_exits_2() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(&d, "[solver\nn = 12");
    let out = escape(&["escape", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse"));
    let cfg = write_config(&d, "[solver]\nbins = 12\n");
    assert_eq!(escape(&["escape", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn unknown_preset_exits_2() {
    assert_eq!(escape(&["scaling", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn scaling_without_eps_list_exits_2() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(&d, "[hole]\nz = 0.6666666666666666\n");
    assert_eq!(escape(&["scaling", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn staircase_with_ten_points_exits_2() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(&d, "[experiment.grid]\nlo = 0.001\nhi = 0.06\npoints = 10\n");
    let out = escape(&["staircase", "--preset", "staircase", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn hofbauer_tent_graph_has_one_domain_two_edges() {
    let d = TempDir::new().unwrap();
    let out = escape(&["hofbauer", "--preset", "hofbauer-tent", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let graph = std::fs::read_to_string(d.path().join("extension.graph")).unwrap();
    let body: Vec<&str> = graph.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.iter().filter(|l| l.starts_with("domain,")).count(), 1);
    assert_eq!(body.iter().filter(|l| l.starts_with("edge,")).count(), 2);
}

#[test]
fn counterexample_summary() {
    let d = TempDir::new().unwrap();
    let out = escape(&["counterexample", "--preset", "counterexample", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = &summary(d.path())["result"];
    assert!((r["tent_limit"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert!((r["logistic_limit"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert_eq!(r["naive"].as_f64().unwrap(), 0.75);
    assert_eq!(r["naive_outside_interval"], Value::Bool(true));
    assert_eq!(r["conjugacy"]["pass"], Value::Bool(true));
}

#[test]
fn predictions_in_scaling_summaries() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(&d, "[solver]\nn = 4096\n[experiment]\neps_list = [0.015625, 0.0078125, 0.00390625]\n");
    let out_dir = d.path().join("aperiodic");
    escape(&["scaling", "--preset", "aperiodic", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(summary(&out_dir)["result"]["predicted_limit"].as_f64(), Some(1.0));

    let out_dir = d.path().join("logistic");
    let out = escape(&["scaling", "--preset", "logistic-z34", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let p = summary(&out_dir)["result"]["predicted_limit"].as_f64().unwrap();
    assert!((p - 0.5).abs() < 1e-12, "{p}");
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_identical_bytes() {
    // The output directory is part of the embedded config, so reuse it.
    let d = TempDir::new().unwrap();
    let dir = d.path().to_str().unwrap();
    let mut runs = Vec::new();
    for seed in ["5", "5", "6"] {
        let out = escape(&["escape", "--preset", "mc-tent-z23", "--seed", seed, "--threads", "2", "--out", dir]);
        assert_eq!(out.status.code(), Some(0));
        runs.push(files(d.path()));
    }
    assert!(runs[0] == runs[1], "same seed, different bytes");
    assert!(runs[0] != runs[2]);
}

#[test]
fn outputs_embed_config_and_version() {
    let d = TempDir::new().unwrap();
    let out = escape(&["accim", "--preset", "accim-markov", "--seed", "11", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    for (name, bytes) in files(d.path()) {
        let text = String::from_utf8(bytes).unwrap();
        if name.ends_with(".json") {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["version"], escape_core::VERSION);
            assert_eq!(v["config"]["experiment"]["seed"], 11);
        } else {
            assert!(text.starts_with(&format!("# escape {}\n", escape_core::VERSION)), "{name}");
            let cfg = text.lines().find_map(|l| l.strip_prefix("# config: ")).expect("config line");
            let v: Value = serde_json::from_str(cfg).unwrap();
            assert_eq!(v["experiment"]["seed"], 11);
        }
    }
}

#[test]
fn config_file_overrides_preset_and_flags_override_both() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(&d, "[experiment]\nseed = 3\nn_steps = 30\n");
    let out = escape(&["escape", "--preset", "empty-hole", "--config", &cfg, "--seed", "9", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let c = &summary(d.path())["config"];
    assert_eq!(c["experiment"]["seed"], 9);
    assert_eq!(c["experiment"]["n_steps"], 30);
    assert_eq!(c["solver"]["n"], 1024);
}
