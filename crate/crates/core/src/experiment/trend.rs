use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use super::sweep::SweepOutput;
use crate::metrics::within_superclass_chance;

/// A directional claim checked against a finished sweep. Every comparison is
/// made against the `α = 0` cell with the same `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum TrendCheck {
    /// For every `n`: mean masked count at `alpha` ≤ `max_ratio` × the `α = 0` mean.
    MaskedReduction {
        alpha: f64,
        max_ratio: f64,
        #[serde(default)]
        required: bool,
    },
    /// For every `n`: mean total error at `alpha` minus the `α = 0` mean ≤ `max_increase`.
    TotalErrorIncrease {
        alpha: f64,
        max_increase: f64,
        #[serde(default)]
        required: bool,
    },
    /// Mean within-super-class fraction strictly increases along the α grid
    /// (sorted ascending).
    WithinFractionIncreasing {
        #[serde(default)]
        required: bool,
    },
    /// Mean coarse error at `alpha` ≤ the `α = 0` mean.
    CoarseErrorNotWorse {
        alpha: f64,
        #[serde(default)]
        required: bool,
    },
    /// At `N = 0` the down-sampled classes are never predicted, for every α.
    SmallSampleZeroAccuracy {
        #[serde(default)]
        required: bool,
    },
    /// At `N = 0` the super-class accuracy of the down-sampled classes beats
    /// the chance rate `(g - 1) / (k - 1)`, for every α.
    SmallSampleSuperAboveChance {
        #[serde(default)]
        required: bool,
    },
}

impl TrendCheck {
    pub fn required(&self) -> bool {
        match *self {
            TrendCheck::MaskedReduction { required, .. }
            | TrendCheck::TotalErrorIncrease { required, .. }
            | TrendCheck::WithinFractionIncreasing { required }
            | TrendCheck::CoarseErrorNotWorse { required, .. }
            | TrendCheck::SmallSampleZeroAccuracy { required }
            | TrendCheck::SmallSampleSuperAboveChance { required } => required,
        }
    }

    pub fn set_required(&mut self, value: bool) {
        match self {
            TrendCheck::MaskedReduction { required, .. }
            | TrendCheck::TotalErrorIncrease { required, .. }
            | TrendCheck::WithinFractionIncreasing { required }
            | TrendCheck::CoarseErrorNotWorse { required, .. }
            | TrendCheck::SmallSampleZeroAccuracy { required }
            | TrendCheck::SmallSampleSuperAboveChance { required } => *required = value,
        }
    }

    fn kind(&self) -> ExperimentKind {
        match self {
            TrendCheck::MaskedReduction { .. } | TrendCheck::TotalErrorIncrease { .. } => {
                ExperimentKind::Masked
            }
            TrendCheck::WithinFractionIncreasing { .. } | TrendCheck::CoarseErrorNotWorse { .. } => {
                ExperimentKind::Hierarchical
            }
            TrendCheck::SmallSampleZeroAccuracy { .. } | TrendCheck::SmallSampleSuperAboveChance { .. } => {
                ExperimentKind::SmallSample
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            TrendCheck::MaskedReduction { alpha, max_ratio, .. } => {
                format!("masked_reduction(alpha={alpha}, max_ratio={max_ratio})")
            }
            TrendCheck::TotalErrorIncrease { alpha, max_increase, .. } => {
                format!("total_error_increase(alpha={alpha}, max_increase={max_increase})")
            }
            TrendCheck::WithinFractionIncreasing { .. } => "within_fraction_increasing".into(),
            TrendCheck::CoarseErrorNotWorse { alpha, .. } => format!("coarse_error_not_worse(alpha={alpha})"),
            TrendCheck::SmallSampleZeroAccuracy { .. } => "small_sample_zero_accuracy".into(),
            TrendCheck::SmallSampleSuperAboveChance { .. } => "small_sample_superclass_above_chance".into(),
        }
    }
}

/// Checks matching the kind's headline claims, all advisory.
pub fn default_trend_checks(kind: ExperimentKind) -> Vec<TrendCheck> {
    match kind {
        ExperimentKind::Masked => vec![
            TrendCheck::MaskedReduction {
                alpha: 0.9,
                max_ratio: 0.5,
                required: false,
            },
            TrendCheck::TotalErrorIncrease {
                alpha: 0.5,
                max_increase: 0.02,
                required: false,
            },
        ],
        ExperimentKind::Hierarchical => vec![
            TrendCheck::WithinFractionIncreasing { required: false },
            TrendCheck::CoarseErrorNotWorse {
                alpha: 0.5,
                required: false,
            },
        ],
        ExperimentKind::SmallSample => vec![
            TrendCheck::SmallSampleZeroAccuracy { required: false },
            TrendCheck::SmallSampleSuperAboveChance { required: false },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub required: bool,
    pub detail: String,
}

impl TrendOutcome {
    /// A required check that did not pass. Skips count as failures when
    /// required.
    pub fn blocks(&self) -> bool {
        self.required && self.status != CheckStatus::Pass
    }
}

impl fmt::Display for TrendOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "SKIP",
        };
        let req = if self.required { "required" } else { "advisory" };
        write!(f, "{status} {} [{req}]: {}", self.name, self.detail)
    }
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

pub fn evaluate_trends(output: &SweepOutput, checks: &[TrendCheck]) -> Vec<TrendOutcome> {
    checks.iter().map(|c| evaluate(output, c)).collect()
}

fn evaluate(output: &SweepOutput, check: &TrendCheck) -> TrendOutcome {
    let outcome = |status, detail: String| TrendOutcome {
        name: check.name(),
        status,
        required: check.required(),
        detail,
    };
    if check.kind() != output.config.kind {
        return outcome(CheckStatus::Skip, format!("not applicable to a {} sweep", output.config.kind));
    }
    let alphas = &output.config.alpha_grid;
    let has = |a: f64| alphas.contains(&a);

    match *check {
        TrendCheck::MaskedReduction { alpha, max_ratio, .. } => {
            if !has(0.0) || !has(alpha) {
                return outcome(CheckStatus::Skip, format!("grid lacks alpha 0 or {alpha}"));
            }
            compare_per_n(output, "masked_error_count", alpha, |base, v| v <= max_ratio * base, outcome)
        }
        TrendCheck::TotalErrorIncrease { alpha, max_increase, .. } => {
            if !has(0.0) || !has(alpha) {
                return outcome(CheckStatus::Skip, format!("grid lacks alpha 0 or {alpha}"));
            }
            compare_per_n(output, "total_error", alpha, |base, v| v - base <= max_increase, outcome)
        }
        TrendCheck::CoarseErrorNotWorse { alpha, .. } => {
            if !has(0.0) || !has(alpha) {
                return outcome(CheckStatus::Skip, format!("grid lacks alpha 0 or {alpha}"));
            }
            compare_per_n(output, "coarse_error", alpha, |base, v| v <= base, outcome)
        }
        TrendCheck::WithinFractionIncreasing { .. } => {
            let mut sorted = alphas.clone();
            sorted.sort_by(f64::total_cmp);
            let mut ok = true;
            let mut parts = Vec::new();
            for n in output.n_values() {
                let means: Vec<Option<f64>> = sorted
                    .iter()
                    .map(|&a| output.mean(a, n, "within_superclass_fraction"))
                    .collect();
                let increasing = means.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a))
                    && means.iter().all(Option::is_some);
                ok &= increasing;
                let series: Vec<String> = sorted
                    .iter()
                    .zip(&means)
                    .map(|(a, m)| format!("{a}:{}", fmt_mean(*m)))
                    .collect();
                parts.push(series.join(" "));
            }
            outcome(if ok { CheckStatus::Pass } else { CheckStatus::Fail }, parts.join("; "))
        }
        TrendCheck::SmallSampleZeroAccuracy { .. } => {
            if !output.config.n_grid.contains(&0) {
                return outcome(CheckStatus::Skip, "grid lacks N = 0".into());
            }
            let means: Vec<(f64, Option<f64>)> = alphas
                .iter()
                .map(|&a| (a, output.mean(a, Some(0), "small_sample_accuracy")))
                .collect();
            let ok = means.iter().all(|(_, m)| *m == Some(0.0));
            let detail = means
                .iter()
                .map(|(a, m)| format!("alpha={a}: {}", fmt_mean(*m)))
                .collect::<Vec<_>>()
                .join(", ");
            outcome(if ok { CheckStatus::Pass } else { CheckStatus::Fail }, detail)
        }
        TrendCheck::SmallSampleSuperAboveChance { .. } => {
            if !output.config.n_grid.contains(&0) {
                return outcome(CheckStatus::Skip, "grid lacks N = 0".into());
            }
            let (Some(map), Some(classes)) = (&output.super_map, &output.small_sample_classes) else {
                return outcome(CheckStatus::Fail, "no super-class map or class selection".into());
            };
            let chance = classes
                .iter()
                .map(|&c| within_superclass_chance(map.group_size(c), output.k))
                .sum::<f64>()
                / classes.len() as f64;
            let means: Vec<(f64, Option<f64>)> = alphas
                .iter()
                .map(|&a| (a, output.mean(a, Some(0), "small_sample_superclass_accuracy")))
                .collect();
            let ok = means.iter().all(|(_, m)| m.is_some_and(|v| v > chance));
            let detail = means
                .iter()
                .map(|(a, m)| format!("alpha={a}: {}", fmt_mean(*m)))
                .collect::<Vec<_>>()
                .join(", ");
            outcome(
                if ok { CheckStatus::Pass } else { CheckStatus::Fail },
                format!("{detail} (chance {chance:.4})"),
            )
        }
    }
}

fn compare_per_n(
    output: &SweepOutput,
    metric: &str,
    alpha: f64,
    holds: impl Fn(f64, f64) -> bool,
    outcome: impl Fn(CheckStatus, String) -> TrendOutcome,
) -> TrendOutcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in output.n_values() {
        let base = output.mean(0.0, n, metric);
        let v = output.mean(alpha, n, metric);
        let pass = matches!((base, v), (Some(b), Some(x)) if holds(b, x));
        ok &= pass;
        let label = n.map_or_else(String::new, |n| format!("n={n} "));
        parts.push(format!("{label}alpha=0: {} alpha={alpha}: {}", fmt_mean(base), fmt_mean(v)));
    }
    outcome(if ok { CheckStatus::Pass } else { CheckStatus::Fail }, parts.join("; "))
}
