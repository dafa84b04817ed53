use std::fs;
use std::path::Path;

use super::config::ExperimentKind;
use super::sweep::{AggregateRow, SweepOutput};
use crate::error::{Error, Result};

pub const AGGREGATE_HEADER: [&str; 8] = ["kind", "alpha", "n", "metric", "mean", "ci95_half", "reps", "failed"];

/// Column layout of `small_sample.csv` (means only).
pub const SMALL_SAMPLE_HEADER: [&str; 5] = [
    "N",
    "alpha",
    "model_accuracy",
    "small_sample_accuracy",
    "small_sample_superclass_accuracy",
];

const NA: &str = "NA";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_opt<T: std::str::FromStr>(s: &str, path: &Path, what: &str) -> Result<Option<T>> {
    if s == NA {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: format!("bad {what} value {s:?}"),
    })
}

/// Writes `aggregate.csv`, `runs/run_<cell>_<rep>.json`,
/// `confusions/run_<cell>_<rep>_{test,train}.csv`, `config.json` and, for
/// small-sample sweeps, `small_sample.csv` under `dir`.
///
/// An empty sweep is rejected before anything is created.
pub fn emit(output: &SweepOutput, dir: &Path) -> Result<()> {
    if output.runs.is_empty() || output.table.is_empty() {
        return Err(Error::EmptyResults);
    }
    fs::create_dir_all(dir.join("runs"))?;
    fs::create_dir_all(dir.join("confusions"))?;

    fs::write(dir.join("aggregate.csv"), aggregate_csv(&output.table)?)?;
    fs::write(dir.join("config.json"), output.config.to_json() + "\n")?;
    if output.config.kind == ExperimentKind::SmallSample {
        fs::write(dir.join("small_sample.csv"), small_sample_csv(output)?)?;
    }
    for run in &output.runs {
        let stem = format!("run_{}_{}", run.cell.index, run.rep);
        let json = serde_json::to_string_pretty(run)?;
        fs::write(dir.join("runs").join(format!("{stem}.json")), json + "\n")?;
        if let Some(cm) = &run.test_confusion {
            fs::write(dir.join("confusions").join(format!("{stem}_test.csv")), cm.to_csv())?;
        }
        if let Some(cm) = &run.train_confusion {
            fs::write(dir.join("confusions").join(format!("{stem}_train.csv")), cm.to_csv())?;
        }
    }
    Ok(())
}

fn into_string(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub(crate) fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.alpha.to_string(),
            r.n.map_or_else(|| NA.to_string(), |n| n.to_string()),
            r.metric.clone(),
            fmt_opt(r.mean),
            fmt_opt(r.ci95_half),
            r.reps.to_string(),
            r.failed.to_string(),
        ])?;
    }
    into_string(w)
}

fn small_sample_csv(output: &SweepOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SMALL_SAMPLE_HEADER)?;
    for cell in &output.cells {
        let mut record = vec![
            cell.n.map_or_else(|| NA.to_string(), |n| n.to_string()),
            cell.alpha.to_string(),
        ];
        for metric in &SMALL_SAMPLE_HEADER[2..] {
            record.push(fmt_opt(output.mean(cell.alpha, cell.n, metric)));
        }
        w.write_record(&record)?;
    }
    into_string(w)
}

/// Parses an `aggregate.csv` written by [`emit`].
pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != AGGREGATE_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let kind = field(0).parse::<ExperimentKind>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let required = |v: Option<usize>, what: &str| {
            v.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: format!("missing {what}"),
            })
        };
        rows.push(AggregateRow {
            kind,
            alpha: parse_opt(field(1), path, "alpha")?.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: "alpha may not be NA".into(),
            })?,
            n: parse_opt(field(2), path, "n")?,
            metric: field(3).to_string(),
            mean: parse_opt(field(4), path, "mean")?,
            ci95_half: parse_opt(field(5), path, "ci95_half")?,
            reps: required(parse_opt(field(6), path, "reps")?, "reps")?,
            failed: required(parse_opt(field(7), path, "failed")?, "failed")?,
        });
    }
    Ok(rows)
}
