use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use costsense::experiment::{read_aggregate_csv, ExperimentConfig, ExperimentKind, TrendCheck};

fn costsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costsense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_tiny_config(path: &Path, checks: Option<Vec<TrendCheck>>) {
    let mut cfg = ExperimentConfig {
        alpha_grid: vec![0.0, 0.5],
        n_grid: vec![10],
        repetitions: 2,
        trend_checks: checks,
        ..ExperimentConfig::default()
    };
    cfg.dataset.blobs.train_per_class = 30;
    cfg.dataset.blobs.test_per_class = 10;
    cfg.model.hidden = vec![8];
    cfg.train.epochs = 2;
    fs::write(path, cfg.to_json()).unwrap();
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.json");
    let out_dir = tmp.path().join("out");
    write_tiny_config(&config, None);
    let out = costsense(&["run", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("4 runs (0 failed) over 2 cells"));
    assert!(stdout(&out).contains("masked_reduction"));
    for f in ["aggregate.csv", "config.json", "runs/run_0_0.json", "runs/run_1_1.json", "confusions/run_1_0_test.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let rows = read_aggregate_csv(&out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(rows.len(), 2 * ExperimentKind::Masked.metrics().len());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.json");
    let out_dir = tmp.path().join("out");
    write_tiny_config(&config, None);
    let out = costsense(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--reps",
        "1",
        "--alpha-grid",
        "0.9",
        "--loss",
        "log-bilinear",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved = ExperimentConfig::read(&out_dir.join("config.json")).unwrap();
    assert_eq!(saved.repetitions, 1);
    assert_eq!(saved.alpha_grid, vec![0.9]);
    assert_eq!(saved.loss.as_str(), "log-bilinear");
    assert_eq!(saved.train.epochs, 2);
    let rows = read_aggregate_csv(&out_dir.join("aggregate.csv")).unwrap();
    assert!(rows.iter().all(|r| r.reps == 1 && r.ci95_half.is_none()));
}

#[test]
fn required_trend_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("cfg.json");
    let impossible = TrendCheck::TotalErrorIncrease {
        alpha: 0.5,
        max_increase: -1.0,
        required: false,
    };
    write_tiny_config(&config, Some(vec![impossible]));
    let args = |dir: &str| {
        vec![
            "run".to_string(),
            "--config".into(),
            config.to_str().unwrap().into(),
            "--out".into(),
            tmp.path().join(dir).to_str().unwrap().into(),
        ]
    };

    let advisory = Command::new(env!("CARGO_BIN_EXE_costsense")).args(args("a")).output().unwrap();
    assert_eq!(advisory.status.code(), Some(0));
    assert!(stdout(&advisory).contains("FAIL total_error_increase(alpha=0.5, max_increase=-1) [advisory]"));

    let mut strict = args("b");
    strict.push("--require-trends".into());
    let required = Command::new(env!("CARGO_BIN_EXE_costsense")).args(strict).output().unwrap();
    assert_eq!(required.status.code(), Some(2));
    assert!(stdout(&required).contains("[required]"));
    assert!(tmp.path().join("b/aggregate.csv").exists());
}

#[test]
fn errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = costsense(&["run", "--alpha-grid", "2.0", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha 2 outside [0, 1]"));
    assert!(!out_dir.exists());

    let missing = costsense(&["run", "--reps", "1"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--out is required"));
}
