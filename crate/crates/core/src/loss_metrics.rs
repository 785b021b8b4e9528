//! Class-weighted binary cross-entropy, the two-map training objective and
//! confusion-based evaluation metrics.

use std::ops::{Add, AddAssign};

use ctma_autograd::{Float, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::{ClassWeighting, LossConfig, LossMode};
use crate::error::{Error, Result};

fn check_binary<T: Float>(t: &Tensor<T>, what: &str) -> Result<()> {
    match t.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(v) => Err(Error::NonBinary(format!("{} contains {}", what, v))),
        None => Ok(()),
    }
}

/// `(w_pos, w_neg)` for a target under the configured weighting.
pub fn class_weights<T: Float>(target: &Tensor<T>, weighting: ClassWeighting) -> (f64, f64) {
    match weighting {
        ClassWeighting::None => (1.0, 1.0),
        ClassWeighting::InverseFrequency => {
            let n = target.numel().max(1) as f64;
            let pos = target.data().iter().filter(|&&v| v == T::one()).count() as f64;
            ((n - pos) / n, pos / n)
        }
    }
}

pub fn weighted_bce<'g, T: Float>(pred: &Var<'g, T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<Var<'g, T>> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    check_binary(target, "target")?;
    let (wp, wn) = class_weights(target, cfg.class_weighting);
    Ok(pred.bce(target, T::from_f64(wp), T::from_f64(wn), T::from_f64(cfg.epsilon))?)
}

/// Coefficients `(c1, c2)` of `L1` and `L2` in the total loss.
pub fn loss_coefficients(cfg: &LossConfig) -> (f64, f64) {
    match cfg.mode {
        LossMode::Balanced => (cfg.alpha, 1.0 - cfg.alpha),
        LossMode::Auxiliary => (cfg.aux_weight, 1.0),
    }
}

pub struct LossTerms<'g, T: Float> {
    pub total: Var<'g, T>,
    pub l1: Var<'g, T>,
    pub l2: Var<'g, T>,
}

/// `p1` must already be at target resolution.
pub fn total_loss<'g, T: Float>(
    p1: &Var<'g, T>,
    p2: &Var<'g, T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms<'g, T>> {
    let l1 = weighted_bce(p1, target, cfg)?;
    let l2 = weighted_bce(p2, target, cfg)?;
    let (c1, c2) = loss_coefficients(cfg);
    let total = l1.scale(T::from_f64(c1)).add(&l2.scale(T::from_f64(c2)))?;
    Ok(LossTerms { total, l1, l2 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn accumulate_confusion<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, acc: ConfusionCounts) -> Result<ConfusionCounts> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    check_binary(pred, "prediction")?;
    check_binary(target, "target")?;
    let mut c = acc;
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        match (p == T::one(), y == T::one()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub oa: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from precision and recall; 0 when both vanish.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> MetricsReport {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    MetricsReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        oa: ratio(counts.tp + counts.tn, counts.total()),
        counts,
    }
}
