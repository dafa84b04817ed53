use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::trend::TrendCheck;
use crate::error::{Error, Result};
use crate::loss::LossVariant;
use crate::model::Activation;
use crate::penalty::DEFAULT_MASKED_COST;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Random masked zone of `n` cells; grid over `n × α`.
    Masked,
    /// Super-class penalty; grid over `α`.
    Hierarchical,
    /// Selected classes down-sampled to `N`; grid over `N × α`.
    SmallSample,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Masked => "masked",
            ExperimentKind::Hierarchical => "hierarchical",
            ExperimentKind::SmallSample => "small_sample",
        }
    }

    /// Names of the per-run metrics, in output order.
    pub fn metrics(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Masked => &[
                "total_error",
                "masked_error_count",
                "train_total_error",
                "train_masked_error_count",
            ],
            ExperimentKind::Hierarchical => &[
                "total_error",
                "coarse_error",
                "within_superclass_fraction",
                "train_total_error",
            ],
            ExperimentKind::SmallSample => &[
                "model_accuracy",
                "small_sample_accuracy",
                "small_sample_superclass_accuracy",
            ],
        }
    }

    pub fn uses_n(self) -> bool {
        !matches!(self, ExperimentKind::Hierarchical)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(ExperimentKind::Masked),
            "hierarchical" => Ok(ExperimentKind::Hierarchical),
            "small-sample" | "small_sample" => Ok(ExperimentKind::SmallSample),
            other => Err(Error::InvalidConfig(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Mnist,
    Blobs,
    BlobsHier,
}

impl DatasetSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetSource::Mnist => "mnist",
            DatasetSource::Blobs => "blobs",
            DatasetSource::BlobsHier => "blobs-hier",
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetSource::Mnist),
            "blobs" => Ok(DatasetSource::Blobs),
            "blobs-hier" | "blobs_hier" => Ok(DatasetSource::BlobsHier),
            other => Err(Error::InvalidConfig(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Gaussian blob generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobParams {
    pub k: usize,
    pub d: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub center_spread: f64,
    pub within_class_sigma: f64,
    /// Used by `blobs-hier` only.
    pub super_classes: usize,
    /// Used by `blobs-hier` only.
    pub class_spread: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            k: 10,
            d: 20,
            train_per_class: 500,
            test_per_class: 200,
            center_spread: 0.55,
            within_class_sigma: 1.0,
            super_classes: 5,
            class_spread: 0.3,
        }
    }
}

impl BlobParams {
    /// Ten classes in five sibling pairs, `d = 10`: siblings overlap strongly
    /// and super-classes moderately.
    pub fn hierarchical() -> Self {
        Self {
            d: 10,
            center_spread: 0.8,
            class_spread: 0.3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub blobs: BlobParams,
    /// Directory holding the four standard MNIST IDX files.
    pub mnist_dir: Option<PathBuf>,
    /// Fraction of the MNIST training file used for training; the rest is
    /// the (unused) validation split.
    pub mnist_train_fraction: f64,
    /// Tab-separated `class<TAB>super-class` file overriding the built-in
    /// grouping.
    pub super_map: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Blobs,
            blobs: BlobParams::default(),
            mnist_dir: None,
            mnist_train_fraction: 55_000.0 / 60_000.0,
            super_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyCosts {
    pub masked_cost: f64,
    pub within_cost: f64,
    pub across_cost: f64,
}

impl Default for PenaltyCosts {
    fn default() -> Self {
        Self {
            masked_cost: DEFAULT_MASKED_COST,
            within_cost: 1.0,
            across_cost: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallSampleConfig {
    /// Number of super-classes that contribute one down-sampled class.
    pub classes: usize,
    /// Explicit class choice; skips the baseline typicality ranking.
    pub explicit: Option<Vec<usize>>,
    pub duplicate_back: bool,
}

impl Default for SmallSampleConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            explicit: None,
            duplicate_back: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub loss: LossVariant,
    pub alpha_grid: Vec<f64>,
    /// Masked-zone sizes (`masked`) or kept examples per class (`small_sample`).
    pub n_grid: Vec<usize>,
    pub penalty: PenaltyCosts,
    pub small_sample: SmallSampleConfig,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub out: Option<PathBuf>,
    /// `None` uses [`super::default_trend_checks`].
    pub trend_checks: Option<Vec<TrendCheck>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Masked,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainParams::default(),
            loss: LossVariant::Bilinear,
            alpha_grid: vec![0.0, 0.1, 0.5, 0.9, 0.95, 0.99],
            n_grid: vec![10, 20, 30, 40, 50],
            penalty: PenaltyCosts::default(),
            small_sample: SmallSampleConfig::default(),
            repetitions: 10,
            base_seed: 0,
            threads: 0,
            out: None,
            trend_checks: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind` on `source`: the masked grid of `α × n`, or
    /// `α ∈ {0, 0.25, 0.5}` (and `N ∈ {0, 10, 50}`) for the super-class
    /// experiments, with the hierarchical blob geometry on `blobs-hier`.
    pub fn preset(kind: ExperimentKind, source: DatasetSource) -> Self {
        let mut cfg = Self {
            kind,
            ..Self::default()
        };
        cfg.dataset.source = source;
        if source == DatasetSource::BlobsHier {
            cfg.dataset.blobs = BlobParams::hierarchical();
        }
        match kind {
            ExperimentKind::Masked => {}
            ExperimentKind::Hierarchical => {
                cfg.alpha_grid = vec![0.0, 0.25, 0.5];
                cfg.n_grid = Vec::new();
            }
            ExperimentKind::SmallSample => {
                cfg.alpha_grid = vec![0.0, 0.25, 0.5];
                cfg.n_grid = vec![0, 10, 50];
            }
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::InvalidConfig("alpha_grid is empty".into()));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
        }
        if self.kind.uses_n() && self.n_grid.is_empty() {
            return Err(Error::InvalidConfig("n_grid is empty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.train.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.train.momentum) {
            return Err(Error::InvalidConfig(
                "learning_rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer of width 0".into()));
        }
        let c = &self.penalty;
        if !(c.masked_cost > 0.0) || !c.masked_cost.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "masked cost must be positive, got {}",
                c.masked_cost
            )));
        }
        if !(c.within_cost >= 0.0) || !(c.across_cost >= c.within_cost) || !c.across_cost.is_finite() {
            return Err(Error::InvalidPenalty(format!(
                "need 0 <= within_cost <= across_cost, got {} and {}",
                c.within_cost, c.across_cost
            )));
        }
        match self.dataset.source {
            DatasetSource::Mnist if self.dataset.mnist_dir.is_none() => {
                return Err(Error::InvalidConfig("mnist dataset needs mnist_dir".into()));
            }
            DatasetSource::Mnist => {
                let f = self.dataset.mnist_train_fraction;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "mnist_train_fraction must lie in (0, 1], got {f}"
                    )));
                }
            }
            DatasetSource::Blobs | DatasetSource::BlobsHier => {
                let b = &self.dataset.blobs;
                if b.k < 2 || b.d == 0 || b.train_per_class == 0 || b.test_per_class == 0 {
                    return Err(Error::InvalidConfig(
                        "blobs need k >= 2 and nonzero d and per-class counts".into(),
                    ));
                }
            }
        }
        if self.kind == ExperimentKind::SmallSample {
            let s = &self.small_sample;
            if s.explicit.as_ref().map_or(s.classes == 0, |c| c.is_empty()) {
                return Err(Error::InvalidConfig("no small-sample classes requested".into()));
            }
        }
        Ok(())
    }
}
