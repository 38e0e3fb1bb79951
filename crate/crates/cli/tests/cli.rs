use std::fs;
use std::path::Path;

use himfuse_cli::{cli_main, exit_code, row_name, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use himfuse::trainer::DropTerm;
use himfuse::Error;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["himfuse".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    cli_main(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small dataset plus a run config pointing at it.
fn setup(dir: &Path, alpha: f64, beta: f64, out: &str) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"n_train": 96, "n_val": 40, "n_test": 40, "latent_dim": 2}"#).unwrap();
    if !dir.join("data/train.jsonl").exists() {
        assert_eq!(run(&["synth", "--spec", p(&spec), "--out", p(&dir.join("data")), "--seed", "4"]), EXIT_OK);
    }
    let cfg = dir.join(format!("{out}.json"));
    let text = format!(
        r#"{{
  "model": {{"text_hidden": 6, "visual_hidden": 4, "acoustic_hidden": 4, "fusion_dim": 8,
            "fusion_hidden": 8, "head_hidden": 6, "predictor_hidden": 6, "reverse_hidden": 8}},
  "train": {{"epochs": 3, "alpha": {alpha}, "beta": {beta}, "batch_size": 8}},
  "data": {{"train": "data/train.jsonl", "val": "data/val.jsonl", "test": "data/test.jsonl"}},
  "out_dir": "{out}"
}}"#
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&[]), EXIT_USAGE);
    assert_eq!(run(&["eval", "--ckpt", "x"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn error_classes_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::NonFiniteLoss("x".into())), EXIT_NUMERIC);
    assert_eq!(exit_code(&Error::InsufficientSamples { class: "neg", count: 1 }), EXIT_NUMERIC);
    assert_eq!(exit_code(&Error::Parse { line: 2, msg: "x".into() }), EXIT_DATA);
    assert_eq!(exit_code(&Error::VersionMismatch { found: 9, expected: 1 }), EXIT_DATA);
}

#[test]
fn data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"data": {"train": "a", "val": "b"}, "out_dir": "o", "bogus": 1}"#).unwrap();
    assert_eq!(run(&["train", "--config", p(&bad)]), EXIT_DATA);
    assert_eq!(run(&["trace", "--run", p(&dir.path().join("missing"))]), EXIT_DATA);
    assert_eq!(run(&["mi-oracle", "--rho", "1.5", "--dim", "1", "--n", "100"]), EXIT_DATA);
}

#[test]
fn mi_oracle_independent_pair() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_himfuse"))
        .args(["mi-oracle", "--rho", "0", "--dim", "1", "--n", "300", "--steps", "20"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "true_mi=0.0");
    for key in ["i_ba=", "infonce=", "gap_ba=", "gap_infonce="] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key}");
    }
}

#[test]
fn binary_reports_usage_exit_code() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_himfuse")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"n_train": 10, "n_val": 4, "n_test": 3}"#).unwrap();
    for d in ["a", "b"] {
        assert_eq!(run(&["synth", "--spec", p(&spec), "--out", p(&dir.path().join(d)), "--seed", "9"]), EXIT_OK);
    }
    for f in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let lines = fs::read_to_string(dir.path().join("a/test.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn train_eval_trace_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = setup(dir.path(), 0.3, 0.1, "run");
    assert_eq!(run(&["train", "--config", p(&cfg), "--seed", "1"]), EXIT_OK);
    let out = dir.path().join("run");
    for f in ["checkpoint.json", "trace.csv", "steps.csv", "metrics.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    // epochs 0..=3 plus the test line
    assert_eq!(metrics.lines().count(), 5);

    let scores = dir.path().join("scores.csv");
    let ckpt = out.join("checkpoint.json");
    let test = dir.path().join("data/test.jsonl");
    assert_eq!(run(&["eval", "--ckpt", p(&ckpt), "--data", p(&test), "--dump-scores", p(&scores)]), EXIT_OK);
    let csv = fs::read_to_string(&scores).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "id,cos_zt,cos_zv,cos_za,score_zt,score_zv,score_za,pred,truth");
    assert_eq!(csv.lines().count(), 41);

    // same seed twice: byte-identical artifacts
    let cfg2 = setup(dir.path(), 0.3, 0.1, "run2");
    assert_eq!(run(&["train", "--config", p(&cfg2), "--seed", "1"]), EXIT_OK);
    for f in ["checkpoint.json", "trace.csv", "steps.csv", "metrics.jsonl"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(dir.path().join("run2").join(f)).unwrap(), "{f}");
    }

    assert_eq!(run(&["trace", "--run", p(&out)]), EXIT_OK);
    assert_eq!(run(&["eval", "--ckpt", p(&test), "--data", p(&test)]), EXIT_DATA);
}

#[test]
fn ablate_without_mi_terms_matches_zero_weights() {
    let dir = TempDir::new().unwrap();
    let zero = setup(dir.path(), 0.0, 0.0, "zero");
    assert_eq!(run(&["train", "--config", p(&zero), "--seed", "3"]), EXIT_OK);
    let full = setup(dir.path(), 0.3, 0.1, "grid");
    assert_eq!(run(&["ablate", "--config", p(&full), "--drop", "lba,lcpc", "--drop", "gmm", "--seed", "3"]), EXIT_OK);

    let row = dir.path().join("grid").join(row_name(&[DropTerm::Lba, DropTerm::Lcpc]));
    assert_eq!(row.file_name().unwrap(), "drop-lba+lcpc");
    let a = fs::read(dir.path().join("zero/trace.csv")).unwrap();
    assert_eq!(a, fs::read(row.join("trace.csv")).unwrap());
    assert_eq!(fs::read(dir.path().join("zero/steps.csv")).unwrap(), fs::read(row.join("steps.csv")).unwrap());
    // 96 samples in batches of 8 over 3 epochs: 36 steps, one full window
    assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 2);
    assert!(dir.path().join("grid/full/trace.csv").exists());
    assert!(dir.path().join("grid/drop-gmm/trace.csv").exists());
    assert_ne!(a, fs::read(dir.path().join("grid/full/trace.csv")).unwrap());

    assert_eq!(run(&["ablate", "--config", p(&full), "--drop", "nope"]), EXIT_DATA);
}
