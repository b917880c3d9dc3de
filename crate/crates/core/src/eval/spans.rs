use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::normalize::{normalize_surface, NormalizationConfig};
use crate::scalar::Scalar;
use crate::schema::RelationClass;

pub const DEFAULT_ROUGE_L_THRESHOLD: f64 = 0.5;

/// Partial span matching: spans match when Rouge-L F strictly exceeds
/// `rouge_l_threshold`. Tokens are the whitespace tokens of the normalized
/// span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub rouge_l_threshold: f64,
    pub normalization: NormalizationConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            rouge_l_threshold: DEFAULT_ROUGE_L_THRESHOLD,
            normalization: NormalizationConfig::default(),
        }
    }
}

impl MatchConfig {
    pub fn with_threshold(threshold: f64) -> Result<Self, EvalError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(EvalError::InvalidThreshold(threshold));
        }
        Ok(Self {
            rouge_l_threshold: threshold,
            ..Default::default()
        })
    }
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based F1 (β = 1): `2·lcs / (|candidate| + |reference|)`.
pub fn rouge_l_f<S: Scalar, T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<S, EvalError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(EvalError::EmptySpan);
    }
    let lcs = lcs_len(candidate, reference);
    Ok(S::from_count(2 * lcs) / S::from_count(candidate.len() + reference.len()))
}

pub fn span_tokens(span: &str, config: &NormalizationConfig) -> Vec<String> {
    normalize_surface(span, config)
        .map(|s| s.split(' ').map(str::to_string).collect())
        .unwrap_or_default()
}

pub fn span_match(s1: &str, s2: &str, config: &MatchConfig) -> bool {
    let a = span_tokens(s1, &config.normalization);
    let b = span_tokens(s2, &config.normalization);
    rouge_l_f::<f64, _>(&a, &b).is_ok_and(|f| f > config.rouge_l_threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRelation {
    pub arg1: String,
    pub arg2: String,
    pub class: RelationClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
    pub true_positives: usize,
}

impl<S: Scalar> Prf<S> {
    /// Both sides empty counts as perfect; otherwise empty ratios are 0.
    fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        if predicted == 0 && gold == 0 {
            return Self {
                precision: S::one(),
                recall: S::one(),
                f1: S::one(),
                true_positives: 0,
            };
        }
        let ratio = |n: usize, d: usize| {
            if d == 0 {
                S::zero()
            } else {
                S::from_count(n) / S::from_count(d)
            }
        };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if tp == 0 {
            S::zero()
        } else {
            S::from_count(2 * tp) / S::from_count(predicted + gold)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelationScores<S> {
    pub entity_detection: Prf<S>,
    pub relation_detection: Prf<S>,
    pub relation_classification: Prf<S>,
}

/// Greedy one-to-one matching in prediction order; returns matched count.
fn greedy_matches<P, G>(predicted: &[P], gold: &[G], matches: impl Fn(&P, &G) -> bool) -> usize {
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in predicted {
        if let Some(j) = (0..gold.len()).find(|&j| !used[j] && matches(p, &gold[j])) {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

fn unique_entities(relations: &[SpanRelation], config: &NormalizationConfig) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for r in relations {
        for arg in [&r.arg1, &r.arg2] {
            let tokens = span_tokens(arg, config);
            if !tokens.is_empty() && !out.contains(&tokens) {
                out.push(tokens);
            }
        }
    }
    out
}

/// Entity detection, relation detection and relation classification scores
/// under Rouge-L partial span matching.
///
/// A prediction is detected when both arguments match an unused gold
/// relation's arguments; it is classified when the classes also agree.
pub fn relation_scores<S: Scalar>(
    predicted: &[SpanRelation],
    gold: &[SpanRelation],
    config: &MatchConfig,
) -> RelationScores<S> {
    let tok = |r: &SpanRelation| {
        (
            span_tokens(&r.arg1, &config.normalization),
            span_tokens(&r.arg2, &config.normalization),
            r.class,
        )
    };
    let pred: Vec<_> = predicted.iter().map(tok).collect();
    let gold_t: Vec<_> = gold.iter().map(tok).collect();
    let threshold = config.rouge_l_threshold;
    let m = |a: &Vec<String>, b: &Vec<String>| {
        rouge_l_f::<f64, _>(a, b).is_ok_and(|f| f > threshold)
    };

    let detected = greedy_matches(&pred, &gold_t, |p, g| m(&p.0, &g.0) && m(&p.1, &g.1));
    let classified = greedy_matches(&pred, &gold_t, |p, g| {
        p.2 == g.2 && m(&p.0, &g.0) && m(&p.1, &g.1)
    });

    let pred_entities = unique_entities(predicted, &config.normalization);
    let gold_entities = unique_entities(gold, &config.normalization);
    let entities = greedy_matches(&pred_entities, &gold_entities, |p, g| m(p, g));

    RelationScores {
        entity_detection: Prf::from_counts(entities, pred_entities.len(), gold_entities.len()),
        relation_detection: Prf::from_counts(detected, pred.len(), gold_t.len()),
        relation_classification: Prf::from_counts(classified, pred.len(), gold_t.len()),
    }
}
