//! Cross-entropy, bilinear and log-bilinear losses.
//!
//! With predicted distribution `p`, target distribution `y` and penalty matrix
//! `A`:
//!
//! - cross-entropy: `-Σ y_i log p_i`
//! - bilinear: `yᵀ A p`
//! - log-bilinear: `-yᵀ A log(1 - p)` (element-wise log)
//!
//! and the trainable objectives mix cross-entropy with one penalty term,
//! `(1 - α)·CE + α·penalty`.
//!
//! Two evaluation paths exist. The [`ProbVector`] functions work on an already
//! normalized vector and clamp `p` to `[ε, 1 - ε]` inside logarithms. The
//! logits path ([`loss_and_grad_logits`]) fuses softmax with the loss: it
//! evaluates `log p_j` and `log(1 - p_j)` as differences of log-sum-exps, which
//! needs no clamp, and returns the closed-form gradient with respect to the
//! logits. Away from the clamp the two paths agree to round-off.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::PenaltyMatrix;

/// Clamp constant for logarithms on the probability path.
pub const EPSILON: f64 = 1e-7;

/// Tolerance on `Σ p = 1`.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A validated probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability(format!(
                "component {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbability(format!(
                "components sum to {sum}"
            )));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// The correct output `y`: a single label or a full distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    OneHot(usize),
    Dense(ProbVector),
}

impl Target {
    fn check(&self, k: usize) -> Result<()> {
        match self {
            Target::OneHot(label) if *label >= k => Err(Error::DimensionMismatch {
                what: "one-hot label (must be < k)",
                expected: k,
                actual: *label,
            }),
            Target::Dense(q) if q.len() != k => Err(Error::DimensionMismatch {
                what: "target distribution length",
                expected: k,
                actual: q.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `yᵀ A`: the per-output cost under this target.
    fn costs<'a>(&self, a: &'a PenaltyMatrix) -> Cow<'a, [f64]> {
        match self {
            Target::OneHot(label) => Cow::Borrowed(a.row(*label)),
            Target::Dense(q) => {
                let k = a.k();
                let mut c = vec![0.0; k];
                for (i, &yi) in q.as_slice().iter().enumerate() {
                    if yi != 0.0 {
                        for (cj, &aij) in c.iter_mut().zip(a.row(i)) {
                            *cj += yi * aij;
                        }
                    }
                }
                Cow::Owned(c)
            }
        }
    }
}

/// Which penalty term is mixed with cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "bilinear")]
    Bilinear,
    #[serde(rename = "log-bilinear")]
    LogBilinear,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::CrossEntropy => "ce",
            LossVariant::Bilinear => "bilinear",
            LossVariant::LogBilinear => "log-bilinear",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossVariant::CrossEntropy),
            "bilinear" => Ok(LossVariant::Bilinear),
            "log-bilinear" => Ok(LossVariant::LogBilinear),
            other => Err(Error::InvalidConfig(format!("unknown loss variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    variant: LossVariant,
    alpha: f64,
    penalty: PenaltyMatrix,
    epsilon: f64,
}

impl LossConfig {
    pub fn new(variant: LossVariant, alpha: f64, penalty: PenaltyMatrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        let report = penalty.validate();
        if !report.is_ok() {
            return Err(Error::InvalidPenalty(report.to_string()));
        }
        Ok(Self {
            variant,
            alpha,
            penalty,
            epsilon: EPSILON,
        })
    }

    /// Plain cross-entropy over `k` classes.
    pub fn cross_entropy(k: usize) -> Self {
        Self {
            variant: LossVariant::CrossEntropy,
            alpha: 0.0,
            penalty: PenaltyMatrix::zeros(k),
            epsilon: EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn variant(&self) -> LossVariant {
        self.variant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> usize {
        self.penalty.k()
    }

    /// True when the penalty term cannot influence the loss.
    pub fn penalty_inactive(&self) -> bool {
        self.variant == LossVariant::CrossEntropy || self.alpha == 0.0
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::InvalidProbability("empty logits".into()));
    }
    check_finite(logits, "softmax logits")?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / sum).collect()))
}

fn cross_entropy_eps(p: &[f64], y: &Target, eps: f64) -> f64 {
    let mut acc = 0.0;
    match y {
        Target::OneHot(label) => acc += p[*label].max(eps).ln(),
        Target::Dense(q) => {
            for (&yi, &pi) in q.as_slice().iter().zip(p) {
                if yi != 0.0 {
                    acc += yi * pi.max(eps).ln();
                }
            }
        }
    }
    // `0.0 - x` rather than `-x` keeps a perfect prediction at +0.0.
    0.0 - acc
}

fn bilinear_from_costs(p: &[f64], costs: &[f64]) -> f64 {
    costs.iter().zip(p).map(|(&c, &pj)| c * pj).sum()
}

fn log_bilinear_from_costs(p: &[f64], costs: &[f64], eps: f64) -> f64 {
    let mut acc = 0.0;
    for (&c, &pj) in costs.iter().zip(p) {
        if c != 0.0 {
            acc += c * (1.0 - pj.min(1.0 - eps)).ln();
        }
    }
    0.0 - acc
}

/// `-Σ y_i log(max(p_i, ε))`.
pub fn cross_entropy(p: &ProbVector, y: &Target) -> Result<f64> {
    y.check(p.len())?;
    Ok(cross_entropy_eps(p.as_slice(), y, EPSILON))
}

/// `yᵀ A p`.
pub fn bilinear_loss(p: &ProbVector, y: &Target, a: &PenaltyMatrix) -> Result<f64> {
    check_len("penalty matrix size vs probability length", a.k(), p.len())?;
    y.check(p.len())?;
    Ok(bilinear_from_costs(p.as_slice(), &y.costs(a)))
}

/// `-yᵀ A log(1 - min(p, 1 - ε))`.
pub fn log_bilinear_loss(p: &ProbVector, y: &Target, a: &PenaltyMatrix) -> Result<f64> {
    check_len("penalty matrix size vs probability length", a.k(), p.len())?;
    y.check(p.len())?;
    Ok(log_bilinear_from_costs(p.as_slice(), &y.costs(a), EPSILON))
}

/// `(1 - α)·CE + α·penalty` on a probability vector.
pub fn combined_loss(p: &ProbVector, y: &Target, cfg: &LossConfig) -> Result<f64> {
    check_len("loss config classes vs probability length", cfg.k(), p.len())?;
    y.check(p.len())?;
    let ce = cross_entropy_eps(p.as_slice(), y, cfg.epsilon);
    let penalty = match cfg.variant {
        LossVariant::CrossEntropy => return Ok(ce),
        LossVariant::Bilinear => bilinear_from_costs(p.as_slice(), &y.costs(&cfg.penalty)),
        LossVariant::LogBilinear => {
            log_bilinear_from_costs(p.as_slice(), &y.costs(&cfg.penalty), cfg.epsilon)
        }
    };
    Ok((1.0 - cfg.alpha) * ce + cfg.alpha * penalty)
}

/// Analytic `∂L/∂logits` of `combined_loss ∘ softmax`.
pub fn loss_grad_logits(logits: &[f64], y: &Target, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_finite(logits, "loss logits")?;
    check_len("loss config classes vs logits length", cfg.k(), logits.len())?;
    y.check(logits.len())?;
    let mut grad = vec![0.0; logits.len()];
    let mut scratch = Scratch::new(logits.len());
    loss_and_grad_logits(logits, y, cfg, &mut grad, &mut scratch);
    Ok(grad)
}

/// Reusable buffers for [`loss_and_grad_logits`].
#[derive(Debug, Clone)]
pub struct Scratch {
    probs: Vec<f64>,
    penalty_grad: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize) -> Self {
        Self {
            probs: vec![0.0; k],
            penalty_grad: vec![0.0; k],
        }
    }
}

/// Fused softmax + loss. Writes `∂L/∂logits` into `grad` and returns `L`.
///
/// Inputs are assumed checked: `logits` finite, lengths equal to `cfg.k()`,
/// target in range. When the penalty is inactive (`α = 0` or the plain
/// cross-entropy variant) the penalty term is never evaluated, so the result is
/// bit-identical to plain cross-entropy.
pub fn loss_and_grad_logits(
    logits: &[f64],
    y: &Target,
    cfg: &LossConfig,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> f64 {
    let k = logits.len();
    debug_assert_eq!(grad.len(), k);
    debug_assert_eq!(cfg.k(), k);

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs = &mut scratch.probs[..k];
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    let lse = max + sum.ln();

    // Cross-entropy: lse·Σy - Σ y_i z_i, gradient p·Σy - y.
    let ce = match y {
        Target::OneHot(label) => {
            grad.copy_from_slice(probs);
            grad[*label] -= 1.0;
            lse - logits[*label]
        }
        Target::Dense(q) => {
            let q = q.as_slice();
            let mass: f64 = q.iter().sum();
            let mut dot = 0.0;
            for j in 0..k {
                grad[j] = probs[j] * mass - q[j];
                dot += q[j] * logits[j];
            }
            lse * mass - dot
        }
    };

    if cfg.penalty_inactive() {
        return ce;
    }

    let costs = y.costs(&cfg.penalty);
    let pg = &mut scratch.penalty_grad[..k];
    pg.fill(0.0);
    let penalty = match cfg.variant {
        LossVariant::Bilinear => {
            // ∂(c·p)/∂z_m = p_m (c_m - c·p)
            let value = bilinear_from_costs(probs, &costs);
            for m in 0..k {
                pg[m] = probs[m] * (costs[m] - value);
            }
            value
        }
        LossVariant::LogBilinear => {
            // log(1 - p_j) = lse_{m≠j} - lse.
            // ∂/∂z_m of -log(1 - p_j) is p_j for m = j and
            // -p_j·exp(z_m - lse_{m≠j}) otherwise; both stay bounded.
            let mut value = 0.0;
            for j in 0..k {
                let c = costs[j];
                if c == 0.0 {
                    continue;
                }
                let rest_max = logits
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, &z)| z)
                    .fold(f64::NEG_INFINITY, f64::max);
                let rest_sum: f64 = logits
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, &z)| (z - rest_max).exp())
                    .sum();
                let rest_lse = rest_max + rest_sum.ln();
                value -= c * (rest_lse - lse);
                let cp = c * probs[j];
                for m in 0..k {
                    if m == j {
                        pg[m] += cp;
                    } else {
                        pg[m] -= cp * (logits[m] - rest_lse).exp();
                    }
                }
            }
            value
        }
        LossVariant::CrossEntropy => unreachable!("handled by penalty_inactive"),
    };

    let alpha = cfg.alpha;
    for (g, &p) in grad.iter_mut().zip(pg.iter()) {
        *g = (1.0 - alpha) * *g + alpha * p;
    }
    (1.0 - alpha) * ce + alpha * penalty
}

/// Loss value on logits through the fused path.
pub fn loss_logits(logits: &[f64], y: &Target, cfg: &LossConfig) -> Result<f64> {
    check_finite(logits, "loss logits")?;
    check_len("loss config classes vs logits length", cfg.k(), logits.len())?;
    y.check(logits.len())?;
    let mut grad = vec![0.0; logits.len()];
    let mut scratch = Scratch::new(logits.len());
    Ok(loss_and_grad_logits(logits, y, cfg, &mut grad, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{random_mask, mask_to_penalty};
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn row_penalty(row0: [f64; 3]) -> PenaltyMatrix {
        PenaltyMatrix::from_rows(&[
            row0.to_vec(),
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for &v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let p = softmax(&[1000.0, 0.0, 0.0]).unwrap();
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!(p.as_slice()[1] < 1e-300);

        // mpmath, 40 digits.
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }

        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&pv(&[0.0, 0.0, 1.0]), &Target::OneHot(2)).unwrap();
        assert_eq!(ce.to_bits(), 0.0f64.to_bits());

        let ce = cross_entropy(&pv(&[0.5, 0.25, 0.25]), &Target::OneHot(0)).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);

        // CE(q, q) is the entropy of q and no other p does better.
        let q = pv(&[0.2, 0.3, 0.5]);
        let entropy: f64 = q.as_slice().iter().map(|&v| -v * v.ln()).sum();
        let at_q = cross_entropy(&q, &Target::Dense(q.clone())).unwrap();
        assert!((at_q - entropy).abs() < 1e-15);
        let other = cross_entropy(&pv(&[0.3, 0.3, 0.4]), &Target::Dense(q)).unwrap();
        assert!(other > at_q);

        assert!(cross_entropy(&pv(&[0.5, 0.5]), &Target::OneHot(2)).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        let zero = PenaltyMatrix::zeros(3);
        assert_eq!(bilinear_loss(&p, &Target::OneHot(1), &zero).unwrap(), 0.0);

        let a = row_penalty([0.0, 1.0, 5.0]);
        let on_label = pv(&[1.0, 0.0, 0.0]);
        assert_eq!(bilinear_loss(&on_label, &Target::OneHot(0), &a).unwrap(), 0.0);

        let v = bilinear_loss(&p, &Target::OneHot(0), &a).unwrap();
        assert!((v - 0.7).abs() < 1e-15);

        assert!(bilinear_loss(&pv(&[0.5, 0.5]), &Target::OneHot(0), &a).is_err());
    }

    #[test]
    fn log_bilinear_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(
            log_bilinear_loss(&p, &Target::OneHot(0), &PenaltyMatrix::zeros(3)).unwrap(),
            0.0
        );

        let a = row_penalty([0.0, 1.0, 5.0]);
        let v = log_bilinear_loss(&p, &Target::OneHot(0), &a).unwrap();
        // mpmath: -(ln 0.8 + 5 ln 0.9)
        assert!((v - 0.749_946_129_603_341_3).abs() < 1e-14);

        // All mass on a penalized class: clamped at -a·ln ε.
        let v = log_bilinear_loss(&pv(&[0.0, 0.0, 1.0]), &Target::OneHot(0), &a).unwrap();
        assert!((v - (-5.0 * EPSILON.ln())).abs() < 1e-6);
        assert!(v.is_finite());
    }

    #[test]
    fn combined_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        let y = Target::OneHot(0);
        let a = row_penalty([0.0, 1.0, 5.0]);

        for variant in [LossVariant::Bilinear, LossVariant::LogBilinear] {
            let at0 = LossConfig::new(variant, 0.0, a.clone()).unwrap();
            let ce = cross_entropy(&p, &y).unwrap();
            assert_eq!(combined_loss(&p, &y, &at0).unwrap().to_bits(), ce.to_bits());
        }
        let at1 = LossConfig::new(LossVariant::Bilinear, 1.0, a.clone()).unwrap();
        let b = bilinear_loss(&p, &y, &a).unwrap();
        assert_eq!(combined_loss(&p, &y, &at1).unwrap().to_bits(), b.to_bits());
        let at1 = LossConfig::new(LossVariant::LogBilinear, 1.0, a.clone()).unwrap();
        let lb = log_bilinear_loss(&p, &y, &a).unwrap();
        assert_eq!(combined_loss(&p, &y, &at1).unwrap().to_bits(), lb.to_bits());

        // mpmath: 0.5·(-ln 0.7) + 0.5·0.7 and 0.5·(-ln 0.7) + 0.5·L_LB
        let half = LossConfig::new(LossVariant::Bilinear, 0.5, a.clone()).unwrap();
        let v = combined_loss(&p, &y, &half).unwrap();
        assert!((v - 0.528_337_471_969_366_2).abs() < 1e-15);
        let half = LossConfig::new(LossVariant::LogBilinear, 0.5, a.clone()).unwrap();
        let v = combined_loss(&p, &y, &half).unwrap();
        assert!((v - 0.553_310_536_771_036_8).abs() < 1e-15);

        // Plain CE ignores the matrix.
        let ce_cfg = LossConfig::new(LossVariant::CrossEntropy, 0.7, a).unwrap();
        assert_eq!(combined_loss(&p, &y, &ce_cfg).unwrap(), cross_entropy(&p, &y).unwrap());
    }

    #[test]
    fn config_validation() {
        let a = PenaltyMatrix::zeros(3);
        assert!(LossConfig::new(LossVariant::Bilinear, -0.1, a.clone()).is_err());
        assert!(LossConfig::new(LossVariant::Bilinear, 1.1, a.clone()).is_err());
        assert!(LossConfig::new(LossVariant::Bilinear, 0.5, a).is_ok());
        assert_eq!("log-bilinear".parse::<LossVariant>().unwrap(), LossVariant::LogBilinear);
        assert!("focal".parse::<LossVariant>().is_err());
    }

    #[test]
    fn ce_gradient_is_p_minus_onehot() {
        let z = [0.3, -1.2, 2.0, 0.5];
        let cfg = LossConfig::cross_entropy(4);
        let g = loss_grad_logits(&z, &Target::OneHot(2), &cfg).unwrap();
        let p = softmax(&z).unwrap();
        for (j, (gj, pj)) in g.iter().zip(p.as_slice()).enumerate() {
            let expected = pj - if j == 2 { 1.0 } else { 0.0 };
            assert!((gj - expected).abs() < 1e-15);
        }
        assert!(loss_grad_logits(&[0.0, f64::NAN, 0.0, 0.0], &Target::OneHot(0), &cfg).is_err());
    }

    #[test]
    fn alpha_zero_gradient_equals_ce_bitwise() {
        let z = [0.3, -1.2, 2.0, 0.5];
        let a = mask_to_penalty(&random_mask(4, 6, 1).unwrap(), 3.0).unwrap();
        let ce = loss_grad_logits(&z, &Target::OneHot(1), &LossConfig::cross_entropy(4)).unwrap();
        for variant in [LossVariant::Bilinear, LossVariant::LogBilinear] {
            let cfg = LossConfig::new(variant, 0.0, a.clone()).unwrap();
            let g = loss_grad_logits(&z, &Target::OneHot(1), &cfg).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&g), bits(&ce));
        }
    }

    fn fd_grad(z: &[f64], y: &Target, cfg: &LossConfig, h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|j| {
                let mut plus = z.to_vec();
                let mut minus = z.to_vec();
                plus[j] += h;
                minus[j] -= h;
                let fp = combined_loss(&softmax(&plus).unwrap(), y, cfg).unwrap();
                let fm = combined_loss(&softmax(&minus).unwrap(), y, cfg).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nb);
        if scale == 0.0 { 0.0 } else { diff / scale }
    }

    #[test]
    fn fused_gradient_matches_finite_differences_dense_target() {
        let mut rng = crate::seed::rng(11);
        let k = 5;
        let entries: Vec<f64> = (0..k * k)
            .map(|idx| if idx / k == idx % k { 0.0 } else { rng.random_range(0.0..3.0) })
            .collect();
        let a = PenaltyMatrix::new(k, entries).unwrap();
        for variant in [LossVariant::CrossEntropy, LossVariant::Bilinear, LossVariant::LogBilinear] {
            let cfg = LossConfig::new(variant, 0.6, a.clone()).unwrap();
            let z: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let y = Target::Dense(pv(&raw.iter().map(|v| v / s).collect::<Vec<_>>()));
            let g = loss_grad_logits(&z, &y, &cfg).unwrap();
            let f = fd_grad(&z, &y, &cfg, 1e-5);
            assert!(rel_err(&g, &f) < 1e-5, "{variant}: {g:?} vs {f:?}");
            let fused = loss_logits(&z, &y, &cfg).unwrap();
            let direct = combined_loss(&softmax(&z).unwrap(), &y, &cfg).unwrap();
            assert!((fused - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn log_bilinear_gradient_stays_bounded_when_confidently_wrong() {
        let a = row_penalty([0.0, 1.0, 5.0]);
        let cfg = LossConfig::new(LossVariant::LogBilinear, 0.9, a).unwrap();
        let z = [0.0, 0.0, 900.0];
        let g = loss_grad_logits(&z, &Target::OneHot(0), &cfg).unwrap();
        assert!(g.iter().all(|v| v.is_finite() && v.abs() <= 10.0), "{g:?}");
        let v = loss_logits(&z, &Target::OneHot(0), &cfg).unwrap();
        assert!(v.is_finite() && v > 1000.0);
    }

    fn prob_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, k).prop_map(|raw| {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / s).collect()
        })
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(p in prob_strategy(6), label in 0usize..6,
                                   costs in proptest::collection::vec(0.0f64..5.0, 36)) {
            let mut costs = costs;
            for i in 0..6 { costs[i * 6 + i] = 0.0; }
            let a = PenaltyMatrix::new(6, costs).unwrap();
            let p = ProbVector::new(p).unwrap();
            let y = Target::OneHot(label);
            prop_assert!(cross_entropy(&p, &y).unwrap() >= 0.0);
            prop_assert!(bilinear_loss(&p, &y, &a).unwrap() >= 0.0);
            prop_assert!(log_bilinear_loss(&p, &y, &a).unwrap() >= 0.0);
        }

        #[test]
        fn bilinear_is_linear_in_p(p1 in prob_strategy(4), p2 in prob_strategy(4),
                                   lambda in 0.0f64..1.0, label in 0usize..4) {
            let a = mask_to_penalty(&random_mask(4, 7, 3).unwrap(), 2.5).unwrap();
            let y = Target::OneHot(label);
            let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let l1 = bilinear_loss(&ProbVector::new(p1).unwrap(), &y, &a).unwrap();
            let l2 = bilinear_loss(&ProbVector::new(p2).unwrap(), &y, &a).unwrap();
            let lm = bilinear_loss(&ProbVector::new(mix).unwrap(), &y, &a).unwrap();
            prop_assert!((lm - (lambda * l1 + (1.0 - lambda) * l2)).abs() < 1e-12);
        }
    }
}
