use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use costsense::experiment::{
    default_trend_checks, evaluate_trends, run_sweep, DatasetSource, ExperimentConfig, ExperimentKind,
};
use costsense::loss::LossVariant;

#[derive(Parser)]
#[command(name = "costsense", version, about = "Cost-sensitive loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded sweep and write aggregate.csv, runs/ and confusions/.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; any flag given below overrides the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// masked, hierarchical or small-sample.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    /// mnist, blobs or blobs-hier.
    #[arg(long)]
    dataset: Option<DatasetSource>,
    /// ce, bilinear or log-bilinear.
    #[arg(long)]
    loss: Option<LossVariant>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha_grid: Option<Vec<f64>>,
    /// Masked-zone sizes, or kept examples per class for small-sample sweeps.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Hidden layer widths, e.g. `--hidden 64,32`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    masked_cost: Option<f64>,
    #[arg(long)]
    within_cost: Option<f64>,
    #[arg(long)]
    across_cost: Option<f64>,
    /// Tab-separated `class<TAB>super-class` file.
    #[arg(long)]
    super_map: Option<PathBuf>,
    /// Explicit small-sample classes, e.g. `--small-classes 1,4`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    small_classes: Option<Vec<usize>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Exit nonzero when a trend check fails.
    #[arg(long)]
    require_trends: bool,
}

impl RunArgs {
    fn resolve(self) -> costsense::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::read(path)?,
            None => {
                let kind = self.experiment.unwrap_or(ExperimentKind::Masked);
                let source = self.dataset.unwrap_or(match kind {
                    ExperimentKind::Masked => DatasetSource::Blobs,
                    _ => DatasetSource::BlobsHier,
                });
                ExperimentConfig::preset(kind, source)
            }
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(self.experiment => kind);
        set!(self.dataset => dataset.source);
        set!(self.loss => loss);
        set!(self.alpha_grid => alpha_grid);
        set!(self.n_grid => n_grid);
        set!(self.reps => repetitions);
        set!(self.seed => base_seed);
        set!(self.epochs => train.epochs);
        set!(self.batch_size => train.batch_size);
        set!(self.lr => train.learning_rate);
        set!(self.momentum => train.momentum);
        set!(self.hidden => model.hidden);
        set!(self.masked_cost => penalty.masked_cost);
        set!(self.within_cost => penalty.within_cost);
        set!(self.across_cost => penalty.across_cost);
        set!(self.threads => threads);
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if self.mnist_dir.is_some() {
            cfg.dataset.mnist_dir = self.mnist_dir;
        }
        if self.super_map.is_some() {
            cfg.dataset.super_map = self.super_map;
        }
        if self.small_classes.is_some() {
            cfg.small_sample.explicit = self.small_classes;
        }
        if cfg.trend_checks.is_none() {
            cfg.trend_checks = Some(default_trend_checks(cfg.kind));
        }
        if self.require_trends {
            for check in cfg.trend_checks.iter_mut().flatten() {
                check.set_required(true);
            }
        }
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> costsense::Result<bool> {
    let cfg = args.resolve()?;
    if cfg.out.is_none() {
        return Err(costsense::Error::InvalidConfig("--out is required".into()));
    }
    let output = run_sweep(&cfg)?;
    let failed_runs = output.runs.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} runs ({} failed) over {} cells written to {}",
        output.runs.len(),
        failed_runs,
        output.cells.len(),
        cfg.out.as_ref().expect("checked").display()
    );
    if let Some(classes) = &output.small_sample_classes {
        println!("small-sample classes: {classes:?}");
    }
    let outcomes = evaluate_trends(&output, cfg.trend_checks.as_deref().unwrap_or(&[]));
    for o in &outcomes {
        println!("{o}");
    }
    Ok(outcomes.iter().all(|o| !o.blocks()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
