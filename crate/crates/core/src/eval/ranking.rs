use serde::Serialize;

use super::EvalError;
use crate::scalar::Scalar;

/// Fraction of relevant items among the first `k`.
pub fn precision_at_k<S: Scalar>(labels: &[bool], k: usize) -> Result<S, EvalError> {
    if k == 0 || k > labels.len() {
        return Err(EvalError::InvalidK {
            k,
            len: labels.len(),
        });
    }
    let hits = labels[..k].iter().filter(|&&l| l).count();
    Ok(S::from_count(hits) / S::from_count(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint<S> {
    pub rank: usize,
    pub recall: S,
    pub precision: S,
}

/// One (recall, precision) point per ranked prefix.
pub fn precision_recall_points<S: Scalar>(labels: &[bool]) -> Result<Vec<PrPoint<S>>, EvalError> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut hits = 0;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            hits += usize::from(l);
            PrPoint {
                rank: i + 1,
                recall: S::from_count(hits) / S::from_count(positives),
                precision: S::from_count(hits) / S::from_count(i + 1),
            }
        })
        .collect())
}
