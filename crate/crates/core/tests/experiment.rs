use std::fs;
use std::path::Path;

use costsense::experiment::{
    aggregate, cells, emit, prepare_data, read_aggregate_csv, run_one, run_sweep, Cell, ExperimentConfig,
    ExperimentKind, RunResult, RunStatus, SweepOutput, AGGREGATE_HEADER,
};
use costsense::loss::LossVariant;
use costsense::metrics::{self, ConfusionMatrix};
use costsense::Error;

fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let source = match kind {
        ExperimentKind::Masked => costsense::experiment::DatasetSource::Blobs,
        _ => costsense::experiment::DatasetSource::BlobsHier,
    };
    let mut cfg = ExperimentConfig::preset(kind, source);
    cfg.dataset.blobs.train_per_class = 40;
    cfg.dataset.blobs.test_per_class = 20;
    cfg.model.hidden = vec![16];
    cfg.train.epochs = 3;
    cfg.train.batch_size = 32;
    cfg.repetitions = 2;
    cfg.threads = 2;
    cfg
}

fn without_timing(mut run: RunResult) -> RunResult {
    run.duration_secs = 0.0;
    run
}

fn read_confusion(path: &Path, k: usize) -> ConfusionMatrix {
    let counts: Vec<u64> = fs::read_to_string(path)
        .unwrap()
        .lines()
        .flat_map(|line| line.split(',').map(|c| c.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .collect();
    ConfusionMatrix::from_counts(k, counts).unwrap()
}

#[test]
fn masked_grid_has_one_cell_per_alpha_and_n() {
    let cfg = ExperimentConfig {
        alpha_grid: vec![0.0, 0.1, 0.5, 0.9, 0.95, 0.99],
        n_grid: vec![10, 20, 30, 40, 50],
        ..ExperimentConfig::default()
    };
    let grid = cells(&cfg);
    assert_eq!(grid.len(), 30);
    assert_eq!(grid[0], Cell { index: 0, alpha: 0.0, n: Some(10) });
    assert_eq!(grid[1], Cell { index: 1, alpha: 0.1, n: Some(10) });
    assert_eq!(grid[29], Cell { index: 29, alpha: 0.99, n: Some(50) });
    assert!(grid.iter().enumerate().all(|(i, c)| c.index == i));
}

#[test]
fn hierarchical_grid_ignores_n() {
    let mut cfg = tiny(ExperimentKind::Hierarchical);
    cfg.n_grid = vec![1, 2, 3];
    let grid = cells(&cfg);
    assert_eq!(grid.len(), cfg.alpha_grid.len());
    assert!(grid.iter().all(|c| c.n.is_none()));
}

#[test]
fn single_repetition_has_no_interval() {
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.5];
    cfg.n_grid = vec![10];
    cfg.repetitions = 1;
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.table.len(), ExperimentKind::Masked.metrics().len());
    for row in &out.table {
        assert!(row.mean.is_some());
        assert_eq!(row.ci95_half, None);
        assert_eq!(row.reps, 1);
        assert_eq!(row.failed, 0);
    }
}

#[test]
fn one_cell_three_reps_gives_one_row_per_metric() {
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.9];
    cfg.n_grid = vec![20];
    cfg.repetitions = 3;
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.runs.len(), 3);
    let names: Vec<&str> = out.table.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, ExperimentKind::Masked.metrics());
    for row in &out.table {
        let values: Vec<f64> = out.runs.iter().map(|r| r.metric(&row.metric).unwrap()).collect();
        let (mean, half) = metrics::ci95(&values).unwrap();
        assert_eq!(row.mean, Some(mean));
        assert_eq!(row.ci95_half, Some(half));
        assert_eq!(row.reps, 3);
    }
}

#[test]
fn empty_sweep_is_rejected_without_creating_output() {
    let cfg = tiny(ExperimentKind::Masked);
    let empty = SweepOutput {
        config: cfg,
        cells: Vec::new(),
        table: Vec::new(),
        runs: Vec::new(),
        k: 10,
        super_map: None,
        small_sample_classes: None,
    };
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    assert!(matches!(emit(&empty, &dir), Err(Error::EmptyResults)));
    assert!(!dir.exists());
}

#[test]
fn empty_grids_fail_validation() {
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid.clear();
    assert!(matches!(run_sweep(&cfg), Err(Error::InvalidConfig(_))));
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.n_grid.clear();
    assert!(matches!(run_sweep(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn outputs_round_trip_and_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.0, 0.9];
    cfg.n_grid = vec![10, 30];
    cfg.out = Some(tmp.path().to_path_buf());
    let out = run_sweep(&cfg).unwrap();

    let header = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), AGGREGATE_HEADER.join(","));
    let table = read_aggregate_csv(&tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(table, out.table);

    let saved_cfg = ExperimentConfig::read(&tmp.path().join("config.json")).unwrap();
    assert_eq!(saved_cfg, cfg);
    assert!(!tmp.path().join("small_sample.csv").exists());

    let mut runs = Vec::new();
    for cell in &out.cells {
        for rep in 0..cfg.repetitions {
            let stem = format!("run_{}_{}", cell.index, rep);
            let text = fs::read_to_string(tmp.path().join("runs").join(format!("{stem}.json"))).unwrap();
            let run: RunResult = serde_json::from_str(&text).unwrap();
            let test_cm = read_confusion(&tmp.path().join("confusions").join(format!("{stem}_test.csv")), 10);
            let train_cm = read_confusion(&tmp.path().join("confusions").join(format!("{stem}_train.csv")), 10);
            assert_eq!(Some(&test_cm), run.test_confusion.as_ref());
            assert_eq!(Some(&train_cm), run.train_confusion.as_ref());
            let mask = run.mask.as_ref().unwrap();
            assert_eq!(mask.n(), cell.n.unwrap());
            assert_eq!(
                run.metric("masked_error_count"),
                Some(metrics::masked_error_count(&test_cm, mask).unwrap() as f64)
            );
            assert_eq!(run.metric("total_error"), Some(metrics::total_error(&test_cm).unwrap()));
            assert_eq!(
                run.metric("train_masked_error_count"),
                Some(metrics::masked_error_count(&train_cm, mask).unwrap() as f64)
            );
            runs.push(run);
        }
    }
    assert_eq!(aggregate(cfg.kind, &out.cells, &runs), out.table);
}

#[test]
fn small_sample_sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::SmallSample);
    cfg.alpha_grid = vec![0.0, 0.5];
    cfg.n_grid = vec![0, 5];
    cfg.repetitions = 1;
    cfg.small_sample.explicit = Some(vec![1, 4]);
    cfg.out = Some(tmp.path().to_path_buf());
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.small_sample_classes, Some(vec![1, 4]));

    let text = fs::read_to_string(tmp.path().join("small_sample.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "N,alpha,model_accuracy,small_sample_accuracy,small_sample_superclass_accuracy"
    );
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("0,0,"));
    assert!(lines[4].starts_with("5,0.5,"));

    for run in &out.runs {
        let expected = match run.cell.n {
            Some(0) => 8 * 40,
            _ => 10 * 40,
        };
        assert_eq!(run.train_examples, expected, "N = {:?}", run.cell.n);
    }
}

#[test]
fn zero_alpha_run_matches_cross_entropy() {
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.0];
    cfg.n_grid = vec![20];
    let data = prepare_data(&cfg).unwrap();
    let cell = cells(&cfg)[0];
    let bilinear = without_timing(run_one(&cfg, &data, cell, 0, None).unwrap());

    let mut ce = cfg.clone();
    ce.loss = LossVariant::CrossEntropy;
    let ce_run = without_timing(run_one(&ce, &data, cell, 0, None).unwrap());
    assert_eq!(bilinear.loss_trace, ce_run.loss_trace);
    assert_eq!(bilinear.test_confusion, ce_run.test_confusion);
    assert_eq!(bilinear.metrics, ce_run.metrics);
}

#[test]
fn same_seed_same_run() {
    let cfg = tiny(ExperimentKind::Hierarchical);
    let data = prepare_data(&cfg).unwrap();
    let cell = cells(&cfg)[1];
    let a = without_timing(run_one(&cfg, &data, cell, 1, None).unwrap());
    let b = without_timing(run_one(&cfg, &data, cell, 1, None).unwrap());
    assert_eq!(a, b);
    let c = without_timing(run_one(&cfg, &data, cell, 0, None).unwrap());
    assert_ne!(a.seeds, c.seeds);
}

#[test]
fn diverged_runs_are_recorded_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.5];
    cfg.n_grid = vec![10];
    cfg.train.learning_rate = f64::MAX;
    cfg.out = Some(tmp.path().to_path_buf());
    let out = run_sweep(&cfg).unwrap();
    for run in &out.runs {
        assert!(matches!(run.status, RunStatus::Failed { .. }), "{:?}", run.status);
        assert!(run.test_confusion.is_none());
    }
    for row in &out.table {
        assert_eq!(row.failed, cfg.repetitions);
        assert_eq!(row.reps, 0);
        assert_eq!(row.mean, None);
    }
    let csv = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",NA,NA,0,2")), "{csv}");
    assert!(!tmp.path().join("confusions").join("run_0_0_test.csv").exists());
}

#[test]
fn config_json_round_trip() {
    let mut cfg = tiny(ExperimentKind::SmallSample);
    cfg.small_sample.explicit = Some(vec![3]);
    cfg.trend_checks = Some(costsense::experiment::default_trend_checks(cfg.kind));
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);

    let partial = ExperimentConfig::from_json(r#"{"kind": "hierarchical", "repetitions": 4}"#).unwrap();
    assert_eq!(partial.kind, ExperimentKind::Hierarchical);
    assert_eq!(partial.repetitions, 4);
    assert_eq!(partial.train, ExperimentConfig::default().train);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = tiny(ExperimentKind::Masked);
    type Mutation = Box<dyn Fn(&mut ExperimentConfig)>;
    let cases: Vec<Mutation> = vec![
        Box::new(|c| c.alpha_grid = vec![1.5]),
        Box::new(|c| c.repetitions = 0),
        Box::new(|c| c.train.batch_size = 0),
        Box::new(|c| c.train.momentum = 1.0),
        Box::new(|c| c.train.learning_rate = -0.1),
        Box::new(|c| c.model.hidden = vec![8, 0]),
        Box::new(|c| c.penalty.masked_cost = 0.0),
        Box::new(|c| {
            c.penalty.within_cost = 3.0;
            c.penalty.across_cost = 2.0;
        }),
        Box::new(|c| c.dataset.source = costsense::experiment::DatasetSource::Mnist),
        Box::new(|c| c.dataset.blobs.k = 1),
    ];
    for (i, mutate) in cases.iter().enumerate() {
        let mut cfg = base.clone();
        mutate(&mut cfg);
        assert!(cfg.validate().is_err(), "case {i} accepted");
    }
    assert!(base.validate().is_ok());
}

#[test]
fn too_many_masked_cells_is_an_error() {
    let mut cfg = tiny(ExperimentKind::Masked);
    cfg.alpha_grid = vec![0.5];
    cfg.n_grid = vec![91];
    assert!(matches!(run_sweep(&cfg), Err(Error::MaskCountOutOfRange { .. })));
}

#[test]
fn hierarchical_without_map_is_an_error() {
    let mut cfg = tiny(ExperimentKind::Hierarchical);
    cfg.dataset.source = costsense::experiment::DatasetSource::Blobs;
    assert!(matches!(run_sweep(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn bilinear_penalty_moves_errors_out_of_the_mask() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Masked, costsense::experiment::DatasetSource::Blobs);
    cfg.alpha_grid = vec![0.0, 0.5];
    cfg.n_grid = vec![10];
    cfg.dataset.blobs.train_per_class = 200;
    cfg.dataset.blobs.test_per_class = 100;
    cfg.repetitions = 10;
    let out = run_sweep(&cfg).unwrap();
    let base = out.mean(0.0, Some(10), "masked_error_count").unwrap();
    let penalized = out.mean(0.5, Some(10), "masked_error_count").unwrap();
    assert!(penalized < base, "masked count {penalized} not below {base}");
}
