//! Ranking, span-matching and annotator-agreement metrics.

mod agreement;
mod labels;
mod ranking;
mod spans;

use thiserror::Error;

pub use agreement::{agreement_suite, cohen_kappa, AgreementMetrics, Confusion};
pub use labels::{
    read_agreement_csv, read_label_csv, AgreementReport, LabeledQuery, QueryMetrics, RankingReport,
};
pub use ranking::{precision_at_k, precision_recall_points, PrPoint};
pub use spans::{
    relation_scores, rouge_l_f, span_match, span_tokens, MatchConfig, Prf, RelationScores,
    SpanRelation, DEFAULT_ROUGE_L_THRESHOLD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("k = {k} outside 1..={len}")]
    InvalidK { k: usize, len: usize },
    #[error("ranked list has no relevant items")]
    NoPositives,
    #[error("empty span")]
    EmptySpan,
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label vectors are empty")]
    Empty,
    #[error("kappa undefined: chance agreement is 1 but labels differ")]
    DegenerateMarginals,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("rouge-L threshold {0} outside (0,1)")]
    InvalidThreshold(f64),
    #[error("csv: {0}")]
    Csv(String),
}
