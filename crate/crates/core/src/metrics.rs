//! Confusion matrices and the error-location metrics computed from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::{ErrorMask, SuperClassMap};

/// Normal-approximation two-sided 95% quantile.
pub const Z95: f64 = 1.96;

/// `counts[i][j]` = examples with true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::DimensionMismatch {
                what: "confusion matrix counts",
                expected: k * k,
                actual: counts.len(),
            });
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn errors(&self) -> u64 {
        self.total() - self.correct()
    }

    /// Header-less CSV, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let row: Vec<String> = self.counts[i * self.k..(i + 1) * self.k]
                .iter()
                .map(|c| c.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs labels",
            expected: labels.len(),
            actual: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::DimensionMismatch {
                what: "class index (must be < k)",
                expected: k,
                actual: p.max(t),
            });
        }
        cm.add(t, p);
    }
    Ok(cm)
}

/// Off-diagonal mass over total.
pub fn total_error(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("total error of an empty confusion matrix"));
    }
    Ok(cm.errors() as f64 / total as f64)
}

/// Number of examples falling in masked cells.
pub fn masked_error_count(cm: &ConfusionMatrix, mask: &ErrorMask) -> Result<u64> {
    if mask.k() != cm.k() {
        return Err(Error::DimensionMismatch {
            what: "mask size vs confusion matrix",
            expected: cm.k(),
            actual: mask.k(),
        });
    }
    Ok(mask.true_cells().map(|(i, j)| cm.get(i, j)).sum())
}

fn check_map(cm: &ConfusionMatrix, map: &SuperClassMap) -> Result<()> {
    if map.k() != cm.k() {
        return Err(Error::DimensionMismatch {
            what: "super-class map size vs confusion matrix",
            expected: cm.k(),
            actual: map.k(),
        });
    }
    Ok(())
}

/// Errors whose predicted class lies in a different super-class.
pub fn coarse_error_count(cm: &ConfusionMatrix, map: &SuperClassMap) -> Result<u64> {
    check_map(cm, map)?;
    let k = cm.k();
    let mut count = 0;
    for i in 0..k {
        for j in 0..k {
            if !map.same_super(i, j) {
                count += cm.get(i, j);
            }
        }
    }
    Ok(count)
}

/// Error rate after collapsing fine classes into super-classes.
pub fn coarse_error(cm: &ConfusionMatrix, map: &SuperClassMap) -> Result<f64> {
    let count = coarse_error_count(cm, map)?;
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("coarse error of an empty confusion matrix"));
    }
    Ok(count as f64 / total as f64)
}

/// Among errors, the fraction landing inside the true super-class.
/// Undefined (an error) when there are no errors at all.
pub fn within_superclass_fraction(cm: &ConfusionMatrix, map: &SuperClassMap) -> Result<f64> {
    let coarse = coarse_error_count(cm, map)?;
    let fine = cm.errors();
    if fine == 0 {
        return Err(Error::Undefined(
            "within-super-class fraction is undefined with zero errors",
        ));
    }
    Ok((fine - coarse) as f64 / fine as f64)
}

/// Expected within-super-class fraction if errors fell uniformly on the other
/// classes: `(g - 1) / (k - 1)` for super-class size `g`.
pub fn within_superclass_chance(group_size: usize, k: usize) -> f64 {
    (group_size as f64 - 1.0) / (k as f64 - 1.0)
}

/// Mean of the per-class accuracies of `classes`.
pub fn mean_class_accuracy(cm: &ConfusionMatrix, classes: &[usize]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Undefined("class accuracy over an empty class set"));
    }
    let mut sum = 0.0;
    for &c in classes {
        check_class(cm, c)?;
        let row = cm.row_sum(c);
        if row == 0 {
            return Err(Error::Undefined("class accuracy of a class with no examples"));
        }
        sum += cm.get(c, c) as f64 / row as f64;
    }
    Ok(sum / classes.len() as f64)
}

/// Fraction of the examples of `classes` predicted inside their true
/// super-class (the correct class included).
pub fn superclass_accuracy(
    cm: &ConfusionMatrix,
    map: &SuperClassMap,
    classes: &[usize],
) -> Result<f64> {
    check_map(cm, map)?;
    let (mut hit, mut total) = (0u64, 0u64);
    for &c in classes {
        check_class(cm, c)?;
        total += cm.row_sum(c);
        hit += (0..cm.k())
            .filter(|&j| map.same_super(c, j))
            .map(|j| cm.get(c, j))
            .sum::<u64>();
    }
    if total == 0 {
        return Err(Error::Undefined("super-class accuracy over no examples"));
    }
    Ok(hit as f64 / total as f64)
}

fn check_class(cm: &ConfusionMatrix, class: usize) -> Result<()> {
    if class >= cm.k() {
        return Err(Error::DimensionMismatch {
            what: "class index (must be < k)",
            expected: cm.k(),
            actual: class,
        });
    }
    Ok(())
}

/// Mean and 95% half-width `1.96·sd/√m` with the sample standard deviation.
pub fn ci95(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Undefined("a confidence interval needs at least 2 samples"));
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, Z95 * var.sqrt() / m.sqrt()))
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}
