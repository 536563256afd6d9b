//! Command line round trips on a small generated corpus.

use std::path::{Path, PathBuf};

use semishot::cli;
use semishot::io;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["semishot"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generated corpus plus a short-run config, in `dir/data`.
fn setup(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let (code, _, err) = run(&["--out", s(&data), "synth"]);
    assert_eq!(code, 0, "{err}");
    let config = data.join("synth.toml");
    let mut text = std::fs::read_to_string(&config).unwrap();
    text = text.replace("max_step = 300", "max_step = 40").replace("eval_every = 25", "eval_every = 10");
    std::fs::write(&config, text).unwrap();
    config
}

#[test]
fn train_then_eval_reproduces_dev_best() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let out = tmp.path().join("run");
    let (code, stdout, err) = run(&["--config", s(&config), "--out", s(&out), "--seeds", "1,2", "train"]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("test accuracy"), "{stdout}");
    assert!(out.join("summary.json").exists());
    assert!(out.join("config.resolved").exists());

    let (code, stdout, err) = run(&["--config", s(&config), "--out", s(&out), "--seeds", "1,2", "eval"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.matches("matches training log").count(), 2, "{stdout}");
    let reports: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    for r in &reports {
        assert_eq!(r["dev_accuracy"], r["logged_dev_accuracy"]);
    }

    let steps = io::read_steps(&out.join("seed-1").join(io::STEPS_FILE)).unwrap();
    assert_eq!(steps.len(), 40);
    assert_eq!(steps[0].step, 0);
    assert_eq!(steps[39].step, 39);
}

#[test]
fn export_embeddings_is_unit_norm_and_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let out = tmp.path().join("run");
    let base = ["--config", s(&config), "--out", s(&out), "--seeds", "3"];
    let (code, _, err) = run(&[&base[..], &["--set", "max_step=5", "train"]].concat());
    assert_eq!(code, 0, "{err}");

    let data = tmp.path().join("data").join("test.jsonl");
    let (code, _, err) = run(&[&base[..], &["export-embeddings", "--data", s(&data)]].concat());
    assert_eq!(code, 0, "{err}");
    let csv = out.join("seed-3").join(io::EMBEDDINGS_FILE);
    let first = std::fs::read(&csv).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let k = std::fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(text.lines().count(), k + 1);
    assert!(text.starts_with("id,label,z0,"));

    let rows = io::read_embeddings(&csv).unwrap();
    assert_eq!(rows.len(), k);
    for (_, label, z) in &rows {
        assert!(label == "topic_a" || label == "topic_b");
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "{norm}");
    }

    let (code, _, err) = run(&[&base[..], &["export-embeddings", "--data", s(&data)]].concat());
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read(&csv).unwrap(), first);
}

#[test]
fn numeric_fault_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let out = tmp.path().join("run");
    let (code, _, err) = run(&[
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--seeds",
        "1",
        "--set",
        "learning_rate=1e300",
        "train",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("numeric fault"), "{err}");
}

#[test]
fn bad_usage_and_config_exit_with_code_one() {
    assert_eq!(run(&["frobnicate"]).0, 1);
    let (code, _, err) = run(&["--set", "no_such_key=1", "split"]);
    assert_eq!(code, 1);
    assert!(err.contains("no_such_key"), "{err}");
    let (code, _, err) = run(&["split"]);
    assert_eq!(code, 1);
    assert!(err.contains("train_data"), "{err}");
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn split_reuses_existing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let out = tmp.path().join("run");
    let args = ["--config", s(&config), "--out", s(&out), "--seeds", "8", "split"];
    assert_eq!(run(&args).0, 0);
    let manifest = out.join("seed-8").join(io::MANIFEST_FILE);
    let before = std::fs::read(&manifest).unwrap();
    assert_eq!(run(&args).0, 0);
    assert_eq!(std::fs::read(&manifest).unwrap(), before);
    let hidden = io::read_hidden_labels(&out.join("seed-8")).unwrap();
    assert_eq!(hidden.len(), 500);
}

#[test]
fn gradcheck_passes() {
    let (code, stdout, err) = run(&["gradcheck", "--instances", "20"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(stdout.lines().filter(|l| l.ends_with(" ok")).count(), 5, "{stdout}");
}

#[test]
fn rerun_from_resolved_snapshot_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = setup(tmp.path());
    let first = tmp.path().join("first");
    let args = ["--config", s(&config), "--out", s(&first), "--seeds", "6", "--set", "lambda1=0.3", "train"];
    assert_eq!(run(&args).0, 0);
    let snapshot = first.join("config.resolved");
    let second = tmp.path().join("second");
    let (code, _, err) = run(&["--config", s(&snapshot), "--out", s(&second), "train"]);
    assert_eq!(code, 0, "{err}");
    for file in [io::STEPS_FILE, io::CHECKPOINT_FILE, io::METRICS_FILE] {
        let a = std::fs::read(first.join("seed-6").join(file)).unwrap();
        let b = std::fs::read(second.join("seed-6").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    assert_eq!(std::fs::read(&snapshot).unwrap(), std::fs::read(second.join("config.resolved")).unwrap());
}
