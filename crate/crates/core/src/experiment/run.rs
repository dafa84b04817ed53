use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, ExperimentKind};
use crate::data::{self, BlobHierarchy, BlobSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::{self, ConfusionMatrix};
use crate::model::{self, MlpSpec, ModelState, TrainConfig};
use crate::penalty::{self, ErrorMask, PenaltyMatrix, SuperClassMap};
use crate::seed;

/// Version of the run JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

pub(crate) const TAG_DATA: u64 = 0xDA7A;
pub(crate) const TAG_SPLIT: u64 = 0x5917;
pub(crate) const TAG_BASELINE: u64 = 0xBA5E;
const TAG_MASK: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_DOWNSAMPLE: u64 = 4;

/// One grid point. `n` is absent for hierarchical sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub alpha: f64,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub job: u64,
    pub mask: u64,
    pub init: u64,
    pub shuffle: u64,
    pub downsample: u64,
}

impl RunSeeds {
    pub fn derive(base: u64, cell: usize, rep: usize) -> Self {
        let job = seed::job_seed(base, cell, rep);
        Self {
            job,
            mask: seed::substream(job, TAG_MASK),
            init: seed::substream(job, TAG_INIT),
            shuffle: seed::substream(job, TAG_SHUFFLE),
            downsample: seed::substream(job, TAG_DOWNSAMPLE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed {
        epoch: usize,
        step: u64,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cell: Cell,
    pub rep: usize,
    pub seeds: RunSeeds,
    pub status: RunStatus,
    pub mask: Option<ErrorMask>,
    pub super_map: Option<SuperClassMap>,
    pub small_sample_classes: Option<Vec<usize>>,
    pub feature_scaling: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub train_confusion: Option<ConfusionMatrix>,
    pub test_confusion: Option<ConfusionMatrix>,
    /// `None` marks a metric that is undefined for this run.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub loss_trace: Vec<f64>,
    pub duration_secs: f64,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }
}

/// Train/test data shared by every job of a sweep.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub super_map: Option<SuperClassMap>,
    pub feature_scaling: String,
}

/// Loads or generates the sweep's dataset (once, from the base seed).
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let ds = &cfg.dataset;
    let mut prepared = match ds.source {
        DatasetSource::Blobs | DatasetSource::BlobsHier => {
            let b = &ds.blobs;
            let hierarchy = (ds.source == DatasetSource::BlobsHier).then_some(BlobHierarchy {
                super_classes: b.super_classes,
                class_spread: b.class_spread,
            });
            let all = data::make_blobs(&BlobSpec {
                k: b.k,
                d: b.d,
                n_per_class: b.train_per_class + b.test_per_class,
                center_spread: b.center_spread,
                within_class_sigma: b.within_class_sigma,
                hierarchy,
                seed: seed::substream(cfg.base_seed, TAG_DATA),
            })?;
            let super_map = all.super_map().cloned();
            let (train, test) = data::take_per_class(&all, b.train_per_class);
            PreparedData {
                train,
                test,
                super_map,
                feature_scaling: "none".into(),
            }
        }
        DatasetSource::Mnist => {
            let dir = ds
                .mnist_dir
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("mnist dataset needs mnist_dir".into()))?;
            let (full_train, test) = data::load_mnist_dir(dir)?;
            let f = ds.mnist_train_fraction;
            let train = if f < 1.0 {
                let parts = data::split(&full_train, &[f, 1.0 - f], seed::substream(cfg.base_seed, TAG_SPLIT))?;
                parts.into_iter().next().expect("two parts")
            } else {
                full_train
            };
            // Stand-in grouping for hierarchical runs: digits {0..4} and {5..9}.
            PreparedData {
                train,
                test,
                super_map: Some(SuperClassMap::contiguous(10, 2)?),
                feature_scaling: "pixel/255, no centering".into(),
            }
        }
    };
    if let Some(path) = &ds.super_map {
        let map = SuperClassMap::read(path)?;
        if map.k() != prepared.train.k() {
            return Err(Error::InvalidSuperMap(format!(
                "map covers {} classes, dataset has {}",
                map.k(),
                prepared.train.k()
            )));
        }
        prepared.super_map = Some(map);
    }
    Ok(prepared)
}

fn require_map(data: &PreparedData) -> Result<&SuperClassMap> {
    data.super_map.as_ref().ok_or_else(|| {
        Error::InvalidConfig("this experiment needs a super-class map (blobs-hier, mnist or --super-map)".into())
    })
}

pub(crate) fn model_spec(cfg: &ExperimentConfig, d: usize, k: usize, init_seed: u64) -> MlpSpec {
    let mut sizes = Vec::with_capacity(cfg.model.hidden.len() + 2);
    sizes.push(d);
    sizes.extend_from_slice(&cfg.model.hidden);
    sizes.push(k);
    MlpSpec::new(sizes, cfg.model.activation, init_seed)
}

pub(crate) fn train_config(cfg: &ExperimentConfig, shuffle_seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        momentum: cfg.train.momentum,
        shuffle_seed,
    }
}

/// Trains and evaluates one model for `cell`, repetition `rep`.
///
/// Divergence produces a failed result carrying the epoch and step; any other
/// error is returned.
pub fn run_one(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    cell: Cell,
    rep: usize,
    small_sample_classes: Option<&[usize]>,
) -> Result<RunResult> {
    let started = Instant::now();
    let seeds = RunSeeds::derive(cfg.base_seed, cell.index, rep);
    let k = data.train.k();

    let mut train_set = data.train.clone();
    let mut mask = None;
    let penalty_matrix: PenaltyMatrix = match cfg.kind {
        ExperimentKind::Masked => {
            let n = cell.n.ok_or_else(|| Error::InvalidConfig("masked cell without n".into()))?;
            let m = penalty::random_mask(k, n, seeds.mask)?;
            let a = penalty::mask_to_penalty(&m, cfg.penalty.masked_cost)?;
            mask = Some(m);
            a
        }
        ExperimentKind::Hierarchical => penalty::hierarchical_penalty(
            require_map(data)?,
            cfg.penalty.within_cost,
            cfg.penalty.across_cost,
        )?,
        ExperimentKind::SmallSample => {
            let n = cell.n.ok_or_else(|| Error::InvalidConfig("small-sample cell without N".into()))?;
            let classes = small_sample_classes
                .ok_or_else(|| Error::InvalidConfig("small-sample run without classes".into()))?;
            for &c in classes {
                train_set = data::downsample_class(
                    &train_set,
                    c,
                    n,
                    cfg.small_sample.duplicate_back,
                    seed::substream(seeds.downsample, c as u64),
                )?;
            }
            penalty::hierarchical_penalty(
                require_map(data)?,
                cfg.penalty.within_cost,
                cfg.penalty.across_cost,
            )?
        }
    };
    let loss = LossConfig::new(cfg.loss, cell.alpha, penalty_matrix)?;

    let state = ModelState::init(&model_spec(cfg, train_set.dim(), k, seeds.init))?;
    let mut result = RunResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        cell,
        rep,
        seeds,
        status: RunStatus::Ok,
        mask,
        super_map: data.super_map.clone(),
        small_sample_classes: small_sample_classes.map(<[usize]>::to_vec),
        feature_scaling: data.feature_scaling.clone(),
        train_examples: train_set.len(),
        test_examples: data.test.len(),
        train_confusion: None,
        test_confusion: None,
        metrics: BTreeMap::new(),
        loss_trace: Vec::new(),
        duration_secs: 0.0,
    };

    match model::train(state, &train_set, &loss, &train_config(cfg, seeds.shuffle)) {
        Ok((trained, trace)) => {
            let train_cm = metrics::confusion(&trained.predict_dataset(&train_set)?, train_set.labels(), k)?;
            let test_cm = metrics::confusion(&trained.predict_dataset(&data.test)?, data.test.labels(), k)?;
            result.metrics = compute_metrics(cfg.kind, &result, data, &train_cm, &test_cm)?;
            result.train_confusion = Some(train_cm);
            result.test_confusion = Some(test_cm);
            result.loss_trace = trace.epoch_loss;
        }
        Err(Error::Diverged { epoch, step }) => {
            result.status = RunStatus::Failed {
                epoch,
                step,
                message: format!("non-finite parameters at epoch {epoch}, step {step}"),
            };
        }
        Err(e) => return Err(e),
    }
    result.duration_secs = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Every metric of `kind`, recomputed from the confusion matrices.
pub(crate) fn compute_metrics(
    kind: ExperimentKind,
    run: &RunResult,
    data: &PreparedData,
    train_cm: &ConfusionMatrix,
    test_cm: &ConfusionMatrix,
) -> Result<BTreeMap<String, Option<f64>>> {
    let mut m = BTreeMap::new();
    let mut put = |name: &str, v: Option<f64>| {
        m.insert(name.to_string(), v);
    };
    match kind {
        ExperimentKind::Masked => {
            let mask = run.mask.as_ref().expect("masked runs carry a mask");
            put("total_error", Some(metrics::total_error(test_cm)?));
            put("masked_error_count", Some(metrics::masked_error_count(test_cm, mask)? as f64));
            put("train_total_error", Some(metrics::total_error(train_cm)?));
            put("train_masked_error_count", Some(metrics::masked_error_count(train_cm, mask)? as f64));
        }
        ExperimentKind::Hierarchical => {
            let map = require_map(data)?;
            put("total_error", Some(metrics::total_error(test_cm)?));
            put("coarse_error", Some(metrics::coarse_error(test_cm, map)?));
            put("within_superclass_fraction", metrics::within_superclass_fraction(test_cm, map).ok());
            put("train_total_error", Some(metrics::total_error(train_cm)?));
        }
        ExperimentKind::SmallSample => {
            let map = require_map(data)?;
            let classes = run.small_sample_classes.as_deref().unwrap_or(&[]);
            put("model_accuracy", Some(1.0 - metrics::total_error(test_cm)?));
            put("small_sample_accuracy", Some(metrics::mean_class_accuracy(test_cm, classes)?));
            put(
                "small_sample_superclass_accuracy",
                Some(metrics::superclass_accuracy(test_cm, map, classes)?),
            );
        }
    }
    Ok(m)
}
