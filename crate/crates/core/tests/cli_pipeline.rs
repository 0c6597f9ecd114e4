use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gde_core::dataio::synthetic;

fn gde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gde")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = gde(args);
    assert!(out.status.success(), "gde {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_dataset(path: &Path) {
    let ds = synthetic(20, 30, 3, 6, 5).unwrap();
    let text: String = ds.pairs.iter().map(|(u, i)| format!("{u} {i}\n")).collect();
    fs::write(path, text).unwrap();
}

const CONFIG: &str = r#"{
  "gde": {"embed_dim": 8, "smoothed_users": 6, "smoothed_items": 8, "rough_users": 1, "rough_items": 1, "dropout": 0.1},
  "train": {"learning_rate": 0.3, "epochs": 5}
}"#;

fn pipeline(root: &Path) -> Vec<u8> {
    let s = |p: &str| root.join(p).to_str().unwrap().to_string();
    write_dataset(&root.join("pairs.txt"));
    fs::write(root.join("config.json"), CONFIG).unwrap();
    ok(&["prepare", "--input", &s("pairs.txt"), "--format", "triplet-text", "--train-frac", "0.6", "--seed", "3", "--out", &s("split")]);
    ok(&["eigens", "--split", &s("split"), "--config", &s("config.json"), "--seed", "1", "--out", &s("eigens")]);
    ok(&["train", "--model", "gde", "--config", &s("config.json"), "--split", &s("split"), "--seed", "1", "--out", &s("run")]);
    ok(&["evaluate", "--checkpoint", &s("run/checkpoint.bin"), "--split", &s("split"), "--out", &s("report.json")]);
    for dir in ["split", "eigens", "run"] {
        assert!(root.join(dir).join("manifest.json").exists(), "{dir} has no manifest");
    }
    assert!(root.join("report.manifest.json").exists());
    let log = fs::read_to_string(root.join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,recall@20(valid),ndcg@20(valid),seconds"));
    fs::read(root.join("report.json")).unwrap()
}

#[test]
fn full_pipeline_is_fast_and_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    let first = pipeline(a.path());
    assert!(start.elapsed().as_secs_f64() < 10.0, "pipeline took {:?}", start.elapsed());
    let second = pipeline(b.path());
    assert_eq!(first, second);
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let ndcg = report["ndcg_at_k"]["20"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ndcg));
}

#[test]
fn every_model_family_trains_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &str| root.join(p).to_str().unwrap().to_string();
    write_dataset(&root.join("pairs.txt"));
    fs::write(root.join("config.json"), CONFIG).unwrap();
    ok(&["prepare", "--input", &s("pairs.txt"), "--format", "triplet-text", "--train-frac", "0.6", "--seed", "3", "--out", &s("split")]);
    for model in ["gde-attn", "mf", "lightgcn"] {
        ok(&["train", "--model", model, "--config", &s("config.json"), "--split", &s("split"), "--loss", "bpr", "--epochs", "2", "--seed", "2", "--out", &s(model)]);
        assert!(root.join(model).join("checkpoint.bin").exists());
    }
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &str| root.join(p).to_str().unwrap().to_string();
    assert_eq!(gde(&["--help"]).status.code(), Some(0));
    assert_eq!(gde(&["train", "--bogus"]).status.code(), Some(2));
    let missing = gde(&["prepare", "--input", &s("nope.txt"), "--format", "triplet-text", "--seed", "1", "--out", &s("x")]);
    assert_eq!(missing.status.code(), Some(2));
    fs::write(root.join("bad.txt"), "0 1\nzero one\n").unwrap();
    let bad = gde(&["prepare", "--input", &s("bad.txt"), "--format", "triplet-text", "--seed", "1", "--out", &s("y")]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(":2"));
    assert_eq!(gde(&["--threads", "4", "--help"]).status.code(), Some(0));
}
