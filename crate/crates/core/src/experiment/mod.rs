//! Seeded sweeps over `(α, n)` grids with repetition, aggregation and
//! reproducible output files.
//!
//! A sweep is a list of cells, each repeated `repetitions` times. Every
//! (cell, repetition) job derives its own seed from the base seed, so jobs are
//! independent and may run in any order or in parallel without changing a
//! single output byte (apart from the wall-clock duration recorded in each run
//! file).

mod config;
mod emit;
mod run;
mod sweep;
mod trend;

pub use config::{
    BlobParams, DatasetConfig, DatasetSource, ExperimentConfig, ExperimentKind, ModelConfig,
    PenaltyCosts, SmallSampleConfig, TrainParams,
};
pub use emit::{emit, read_aggregate_csv, AGGREGATE_HEADER, SMALL_SAMPLE_HEADER};
pub use run::{prepare_data, run_one, Cell, PreparedData, RunResult, RunSeeds, RunStatus, SCHEMA_VERSION};
pub use sweep::{aggregate, cells, run_sweep, select_small_sample_classes, AggregateRow, SweepOutput};
pub use trend::{default_trend_checks, evaluate_trends, CheckStatus, TrendCheck, TrendOutcome};
