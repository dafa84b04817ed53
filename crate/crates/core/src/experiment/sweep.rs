use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::run::{self, prepare_data, run_one, Cell, PreparedData, RunResult, TAG_BASELINE};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics;
use crate::model::{self, ModelState};
use crate::penalty::SuperClassMap;
use crate::seed;

/// One line of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub kind: ExperimentKind,
    pub alpha: f64,
    pub n: Option<usize>,
    pub metric: String,
    /// `None` when no successful run defined the metric.
    pub mean: Option<f64>,
    /// `None` with fewer than two values.
    pub ci95_half: Option<f64>,
    /// Runs contributing a value.
    pub reps: usize,
    /// Runs of this cell that failed to train.
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub table: Vec<AggregateRow>,
    /// Ordered by cell, then repetition.
    pub runs: Vec<RunResult>,
    pub k: usize,
    pub super_map: Option<SuperClassMap>,
    pub small_sample_classes: Option<Vec<usize>>,
}

impl SweepOutput {
    pub fn row(&self, alpha: f64, n: Option<usize>, metric: &str) -> Option<&AggregateRow> {
        self.table
            .iter()
            .find(|r| r.alpha == alpha && r.n == n && r.metric == metric)
    }

    pub fn mean(&self, alpha: f64, n: Option<usize>, metric: &str) -> Option<f64> {
        self.row(alpha, n, metric).and_then(|r| r.mean)
    }

    /// Distinct `n` values in grid order (`[None]` for hierarchical sweeps).
    pub fn n_values(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.n) {
                out.push(c.n);
            }
        }
        out
    }
}

/// Grid cells: `n` outer, `α` inner; `α` only for hierarchical sweeps.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let ns: Vec<Option<usize>> = if cfg.kind.uses_n() {
        cfg.n_grid.iter().map(|&n| Some(n)).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::with_capacity(ns.len() * cfg.alpha_grid.len());
    for n in ns {
        for &alpha in &cfg.alpha_grid {
            out.push(Cell {
                index: out.len(),
                alpha,
                n,
            });
        }
    }
    out
}

/// Picks the down-sampled classes.
///
/// Unless listed explicitly, a cross-entropy baseline is trained on the full
/// data and each class is scored by its typicality: the fraction of its test
/// errors that stay inside its super-class. The most typical class of every
/// super-class is a candidate; the `classes` highest-scoring candidates are
/// returned in ascending order. Ties go to the lower index.
pub fn select_small_sample_classes(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<usize>> {
    let k = data.train.k();
    if let Some(explicit) = &cfg.small_sample.explicit {
        let mut classes = explicit.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() != explicit.len() || classes.iter().any(|&c| c >= k) {
            return Err(Error::InvalidConfig(format!(
                "small-sample classes {explicit:?} must be distinct and < {k}"
            )));
        }
        return Ok(classes);
    }
    let map = data
        .super_map
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("small-sample selection needs a super-class map".into()))?;
    if cfg.small_sample.classes > map.m() {
        return Err(Error::InvalidConfig(format!(
            "cannot pick {} classes from {} super-classes",
            cfg.small_sample.classes,
            map.m()
        )));
    }

    let base = seed::substream(cfg.base_seed, TAG_BASELINE);
    let state = ModelState::init(&run::model_spec(cfg, data.train.dim(), k, seed::substream(base, 1)))?;
    let (trained, _) = model::train(
        state,
        &data.train,
        &LossConfig::cross_entropy(k),
        &run::train_config(cfg, seed::substream(base, 2)),
    )?;
    let cm = metrics::confusion(&trained.predict_dataset(&data.test)?, data.test.labels(), k)?;

    let typicality = |c: usize| -> f64 {
        let errors = cm.row_sum(c) - cm.get(c, c);
        if errors == 0 {
            return 0.0;
        }
        let within: u64 = (0..k)
            .filter(|&j| j != c && map.same_super(c, j))
            .map(|j| cm.get(c, j))
            .sum();
        within as f64 / errors as f64
    };

    let mut candidates: Vec<(usize, f64)> = (0..map.m())
        .filter_map(|s| {
            map.members(s)
                .into_iter()
                .map(|c| (c, typicality(c)))
                .fold(None, |best: Option<(usize, f64)>, (c, t)| match best {
                    Some((_, bt)) if bt >= t => best,
                    _ => Some((c, t)),
                })
        })
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = candidates
        .into_iter()
        .take(cfg.small_sample.classes)
        .map(|(c, _)| c)
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Mean and 95% half-width of every metric per cell, over successful runs.
pub fn aggregate(kind: ExperimentKind, cells: &[Cell], runs: &[RunResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::with_capacity(cells.len() * kind.metrics().len());
    for cell in cells {
        let in_cell: Vec<&RunResult> = runs.iter().filter(|r| r.cell.index == cell.index).collect();
        let failed = in_cell.iter().filter(|r| !r.is_ok()).count();
        for &metric in kind.metrics() {
            let values: Vec<f64> = in_cell
                .iter()
                .filter(|r| r.is_ok())
                .filter_map(|r| r.metric(metric))
                .collect();
            let (mean, half) = match metrics::ci95(&values) {
                Ok((m, h)) => (Some(m), Some(h)),
                Err(_) => (metrics::mean(&values), None),
            };
            rows.push(AggregateRow {
                kind,
                alpha: cell.alpha,
                n: cell.n,
                metric: metric.to_string(),
                mean,
                ci95_half: half,
                reps: values.len(),
                failed,
            });
        }
    }
    rows
}

/// Runs every (cell, repetition) job, aggregates, and writes the outputs when
/// `cfg.out` is set.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let small = match cfg.kind {
        ExperimentKind::SmallSample => Some(select_small_sample_classes(cfg, &data)?),
        _ => None,
    };
    let cells = cells(cfg);
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|&c| (0..cfg.repetitions).map(move |rep| (c, rep)))
        .collect();
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, rep)| run_one(cfg, &data, cell, rep, small.as_deref()))
            .collect::<Result<Vec<_>>>()
    })?;

    let output = SweepOutput {
        config: cfg.clone(),
        table: aggregate(cfg.kind, &cells, &runs),
        cells,
        runs,
        k: data.train.k(),
        super_map: data.super_map.clone(),
        small_sample_classes: small,
    };
    if let Some(dir) = &cfg.out {
        super::emit(&output, dir)?;
    }
    Ok(output)
}
