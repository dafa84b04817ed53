//! Penalty matrices.
//!
//! `a[i][j]` is the relative cost of predicting class `j` for an example whose
//! true class is `i`. Two constructions are provided: unit costs on a random
//! set of off-diagonal cells (an [`ErrorMask`]), and a two-level cost derived
//! from a [`SuperClassMap`].

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default cost placed at masked cells.
pub const DEFAULT_MASKED_COST: f64 = 1.0;

/// A k×k non-negative cost matrix with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    k: usize,
    entries: Vec<f64>,
}

/// One violated invariant of a candidate penalty matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Negative { row: usize, col: usize, value: f64 },
    NonzeroDiagonal { index: usize, value: f64 },
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Negative { row, col, value } => {
                write!(f, "negative entry {value} at ({row},{col})")
            }
            Violation::NonzeroDiagonal { index, value } => {
                write!(f, "nonzero diagonal entry {value} at ({index},{index})")
            }
            Violation::NonFinite { row, col } => write!(f, "non-finite entry at ({row},{col})"),
        }
    }
}

/// Result of [`validate_penalty`]. Empty means the matrix is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenaltyReport {
    pub violations: Vec<Violation>,
}

impl PenaltyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Coordinates of every violation, in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.violations
            .iter()
            .map(|v| match *v {
                Violation::Negative { row, col, .. } | Violation::NonFinite { row, col } => {
                    (row, col)
                }
                Violation::NonzeroDiagonal { index, .. } => (index, index),
            })
            .collect()
    }
}

impl fmt::Display for PenaltyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks a row-major k×k matrix against the penalty-matrix invariants.
pub fn validate_penalty(k: usize, entries: &[f64]) -> PenaltyReport {
    let mut violations = Vec::new();
    for row in 0..k {
        for col in 0..k {
            let value = entries[row * k + col];
            if !value.is_finite() {
                violations.push(Violation::NonFinite { row, col });
            } else if value < 0.0 {
                violations.push(Violation::Negative { row, col, value });
            } else if row == col && value != 0.0 {
                violations.push(Violation::NonzeroDiagonal { index: row, value });
            }
        }
    }
    PenaltyReport { violations }
}

impl PenaltyMatrix {
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::DimensionMismatch {
                what: "penalty matrix entries",
                expected: k * k,
                actual: entries.len(),
            });
        }
        let report = validate_penalty(k, &entries);
        if !report.is_ok() {
            return Err(Error::InvalidPenalty(report.to_string()));
        }
        Ok(Self { k, entries })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            entries: vec![0.0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let mut entries = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "penalty matrix row",
                    expected: k,
                    actual: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(k, entries)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.k + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&a| a == 0.0)
    }

    pub fn validate(&self) -> PenaltyReport {
        validate_penalty(self.k, &self.entries)
    }

    /// `k` lines of `k` comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.k {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|e| {
                        Error::InvalidPenalty(format!("cannot parse {field:?} as a number: {e}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

/// Boolean k×k matrix marking the "masked zone": cells whose errors are to be
/// avoided. Diagonal cells are never masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct ErrorMask {
    k: usize,
    cells: Vec<bool>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    k: usize,
    cells: Vec<(usize, usize)>,
}

impl From<ErrorMask> for MaskRepr {
    fn from(mask: ErrorMask) -> Self {
        MaskRepr {
            k: mask.k,
            cells: mask.true_cells().collect(),
        }
    }
}

impl TryFrom<MaskRepr> for ErrorMask {
    type Error = Error;

    fn try_from(repr: MaskRepr) -> Result<Self> {
        ErrorMask::from_cells(repr.k, &repr.cells)
    }
}

impl ErrorMask {
    pub fn empty(k: usize) -> Self {
        Self {
            k,
            cells: vec![false; k * k],
            n: 0,
        }
    }

    pub fn full(k: usize) -> Self {
        let mut cells = vec![true; k * k];
        for i in 0..k {
            cells[i * k + i] = false;
        }
        Self {
            k,
            cells,
            n: k * k.saturating_sub(1),
        }
    }

    /// Builds a mask from explicit `(row, col)` cells. Duplicates collapse.
    pub fn from_cells(k: usize, cells: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::empty(k);
        for &(i, j) in cells {
            if i >= k || j >= k {
                return Err(Error::InvalidConfig(format!(
                    "mask cell ({i},{j}) outside a {k}x{k} matrix"
                )));
            }
            if i == j {
                return Err(Error::InvalidConfig(format!(
                    "mask cell ({i},{j}) is on the diagonal"
                )));
            }
            if !mask.cells[i * k + j] {
                mask.cells[i * k + j] = true;
                mask.n += 1;
            }
        }
        Ok(mask)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of masked cells.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.k + col]
    }

    /// Masked cells in row-major order.
    pub fn true_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.k;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(idx, _)| (idx / k, idx % k))
    }
}

/// Samples `n` distinct off-diagonal cells uniformly at random.
///
/// The k(k-1) off-diagonal cells are listed in row-major order, shuffled with a
/// seeded ChaCha8 stream, and the first `n` are taken.
pub fn random_mask(k: usize, n: usize, seed: u64) -> Result<ErrorMask> {
    let max = k * k.saturating_sub(1);
    if n > max {
        return Err(Error::MaskCountOutOfRange { k, n, max });
    }
    let mut off_diagonal: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut rng = seed::rng(seed);
    off_diagonal.shuffle(&mut rng);
    ErrorMask::from_cells(k, &off_diagonal[..n])
}

/// `cost` at masked cells, zero elsewhere.
pub fn mask_to_penalty(mask: &ErrorMask, cost: f64) -> Result<PenaltyMatrix> {
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "masked cost must be a positive finite number, got {cost}"
        )));
    }
    let entries = mask
        .cells
        .iter()
        .map(|&c| if c { cost } else { 0.0 })
        .collect();
    PenaltyMatrix::new(mask.k, entries)
}

/// Assignment of fine classes to super-classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SuperClassMap {
    assignment: Vec<usize>,
    m: usize,
}

impl TryFrom<Vec<usize>> for SuperClassMap {
    type Error = Error;

    fn try_from(assignment: Vec<usize>) -> Result<Self> {
        SuperClassMap::new(assignment)
    }
}

impl From<SuperClassMap> for Vec<usize> {
    fn from(map: SuperClassMap) -> Self {
        map.assignment
    }
}

impl SuperClassMap {
    /// `assignment[fine] = super`. Super-class ids must be exactly `0..m` with
    /// every id used at least once.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InvalidSuperMap("no fine classes".into()));
        }
        let m = assignment.iter().copied().max().unwrap_or(0) + 1;
        let mut sizes = vec![0usize; m];
        for &s in &assignment {
            sizes[s] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&c| c == 0) {
            return Err(Error::InvalidSuperMap(format!(
                "super-class {empty} has no members"
            )));
        }
        Ok(Self { assignment, m })
    }

    /// `k` classes in `m` contiguous groups of `k / m`: class `c` belongs to
    /// super-class `c / (k / m)`.
    pub fn contiguous(k: usize, m: usize) -> Result<Self> {
        if m == 0 || k == 0 || !k.is_multiple_of(m) {
            return Err(Error::InvalidSuperMap(format!(
                "{k} classes cannot be split into {m} equal groups"
            )));
        }
        let g = k / m;
        Self::new((0..k).map(|c| c / g).collect())
    }

    /// Every class is its own super-class.
    pub fn singletons(k: usize) -> Result<Self> {
        Self::new((0..k).collect())
    }

    /// Number of fine classes.
    pub fn k(&self) -> usize {
        self.assignment.len()
    }

    /// Number of super-classes.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn super_of(&self, fine: usize) -> usize {
        self.assignment[fine]
    }

    pub fn same_super(&self, a: usize, b: usize) -> bool {
        self.assignment[a] == self.assignment[b]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn members(&self, super_class: usize) -> Vec<usize> {
        (0..self.k())
            .filter(|&c| self.assignment[c] == super_class)
            .collect()
    }

    pub fn group_size(&self, fine: usize) -> usize {
        let s = self.assignment[fine];
        self.assignment.iter().filter(|&&x| x == s).count()
    }

    /// Parses `fine<TAB>super` lines. Blank lines are ignored; every fine index
    /// in `0..k` must appear exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(fine), Some(sup), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::InvalidSuperMap(format!(
                    "line {}: expected `fine<TAB>super`, got {line:?}",
                    lineno + 1
                )));
            };
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| {
                    Error::InvalidSuperMap(format!("line {}: {s:?}: {e}", lineno + 1))
                })
            };
            pairs.push((parse(fine)?, parse(sup)?));
        }
        let k = pairs.len();
        let mut assignment = vec![None; k];
        for (fine, sup) in pairs {
            if fine >= k {
                return Err(Error::InvalidSuperMap(format!(
                    "fine index {fine} out of range for {k} lines"
                )));
            }
            if assignment[fine].replace(sup).is_some() {
                return Err(Error::InvalidSuperMap(format!(
                    "fine index {fine} listed more than once"
                )));
            }
        }
        Self::new(assignment.into_iter().map(|s| s.unwrap()).collect())
    }

    pub fn to_text(&self) -> String {
        self.assignment
            .iter()
            .enumerate()
            .map(|(fine, sup)| format!("{fine}\t{sup}\n"))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Zero on the diagonal, `within_cost` for pairs sharing a super-class,
/// `across_cost` otherwise.
pub fn hierarchical_penalty(
    map: &SuperClassMap,
    within_cost: f64,
    across_cost: f64,
) -> Result<PenaltyMatrix> {
    if !(within_cost >= 0.0) || !across_cost.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "costs must be finite and non-negative (within {within_cost}, across {across_cost})"
        )));
    }
    if within_cost > across_cost {
        return Err(Error::InvalidConfig(format!(
            "within-super-class cost {within_cost} exceeds across cost {across_cost}"
        )));
    }
    let k = map.k();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                entries[i * k + j] = if map.same_super(i, j) {
                    within_cost
                } else {
                    across_cost
                };
            }
        }
    }
    PenaltyMatrix::new(k, entries)
}
