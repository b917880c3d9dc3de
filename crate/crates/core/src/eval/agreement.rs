use serde::Serialize;

use super::EvalError;
use crate::scalar::Scalar;

/// 2×2 confusion counts, `a` as reference and `b` as prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(a: &[bool], b: &[bool]) -> Result<Self, EvalError> {
        if a.len() != b.len() {
            return Err(EvalError::LengthMismatch(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut c = Confusion::default();
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Cohen's kappa for two binary annotators, from integer counts:
/// `(n·agree − Σ marginal products) / (n² − Σ marginal products)`.
pub fn cohen_kappa<S: Scalar>(a: &[bool], b: &[bool]) -> Result<S, EvalError> {
    let c = Confusion::from_labels(a, b)?;
    kappa_from(&c)
}

fn kappa_from<S: Scalar>(c: &Confusion) -> Result<S, EvalError> {
    let n = c.total() as u128;
    let agree = (c.tp + c.tn) as u128;
    let a_pos = (c.tp + c.fn_) as u128;
    let b_pos = (c.tp + c.fp) as u128;
    let chance = a_pos * b_pos + (n - a_pos) * (n - b_pos);
    let denom = n * n - chance;
    if denom == 0 {
        return if agree == n {
            Ok(S::one())
        } else {
            Err(EvalError::DegenerateMarginals)
        };
    }
    let num = (n * agree) as i128 - chance as i128;
    Ok(S::of(num as f64) / S::of(denom as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementMetrics<S> {
    pub accuracy: S,
    pub f1: S,
    pub balanced_accuracy: S,
    pub mcc: S,
    pub kappa: S,
}

/// Pairwise agreement from one shared confusion matrix.
///
/// Conventions: F1 is 0 when neither annotator uses the positive label;
/// balanced accuracy averages recall over the classes present in `a`;
/// MCC is 0 when any marginal is empty.
pub fn agreement_suite<S: Scalar>(a: &[bool], b: &[bool]) -> Result<AgreementMetrics<S>, EvalError> {
    let c = Confusion::from_labels(a, b)?;
    let n = S::from_count(c.total());
    let f = S::from_count;
    let accuracy = f(c.tp + c.tn) / n;

    let f1_denom = 2 * c.tp + c.fp + c.fn_;
    let f1 = if f1_denom == 0 {
        S::zero()
    } else {
        f(2 * c.tp) / f(f1_denom)
    };

    let mut recalls = Vec::with_capacity(2);
    if c.tp + c.fn_ > 0 {
        recalls.push(f(c.tp) / f(c.tp + c.fn_));
    }
    if c.tn + c.fp > 0 {
        recalls.push(f(c.tn) / f(c.tn + c.fp));
    }
    let balanced_accuracy = recalls.iter().copied().sum::<S>() / f(recalls.len());

    let marginals = [c.tp + c.fp, c.tp + c.fn_, c.tn + c.fp, c.tn + c.fn_];
    let mcc = if marginals.contains(&0) {
        S::zero()
    } else {
        let num = S::of(c.tp as f64 * c.tn as f64 - c.fp as f64 * c.fn_ as f64);
        let den = marginals
            .iter()
            .map(|&m| S::from_count(m))
            .fold(S::one(), |acc, m| acc * m)
            .sqrt();
        num / den
    };

    Ok(AgreementMetrics {
        accuracy,
        f1,
        balanced_accuracy,
        mcc,
        kappa: kappa_from(&c)?,
    })
}
