//! Label files and metric reports.
//!
//! Ranking labels: CSV with columns `query_id, rank, relation_id, label`.
//! Agreement labels: CSV with columns `item_id, label_a, label_b`.
//! Labels are `0` or `1`.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Serialize;

use super::agreement::{agreement_suite, AgreementMetrics, Confusion};
use super::ranking::{precision_at_k, precision_recall_points, PrPoint};
use super::EvalError;

pub const RANKING_COLUMNS: [&str; 4] = ["query_id", "rank", "relation_id", "label"];
pub const AGREEMENT_COLUMNS: [&str; 3] = ["item_id", "label_a", "label_b"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledItem {
    pub rank: usize,
    pub relation_id: String,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub query_id: String,
    /// Sorted by rank.
    pub items: Vec<LabeledItem>,
}

impl LabeledQuery {
    pub fn labels(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.relevant).collect()
    }
}

fn csv_err(e: csv::Error) -> EvalError {
    let line = e.position().map(|p| p.line());
    match line {
        Some(line) => EvalError::BadRow {
            line,
            message: e.to_string(),
        },
        None => EvalError::Csv(e.to_string()),
    }
}

fn column_indices<R: Read>(
    reader: &mut csv::Reader<R>,
    columns: &[&str],
) -> Result<Vec<usize>, EvalError> {
    let headers = reader.headers().map_err(csv_err)?.clone();
    columns
        .iter()
        .map(|&name| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| EvalError::MissingColumn(name.to_string()))
        })
        .collect()
}

fn parse_label(value: &str, line: u64) -> Result<bool, EvalError> {
    match value.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(EvalError::BadRow {
            line,
            message: format!("label must be 0 or 1, got `{other}`"),
        }),
    }
}

/// Queries in order of first appearance, items sorted by rank.
pub fn read_label_csv<R: Read>(input: R) -> Result<Vec<LabeledQuery>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let cols = column_indices(&mut reader, &RANKING_COLUMNS)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_query: HashMap<String, Vec<LabeledItem>> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let rank: usize = field(1).parse().map_err(|_| EvalError::BadRow {
            line,
            message: format!("rank must be a positive integer, got `{}`", field(1)),
        })?;
        let item = LabeledItem {
            rank,
            relation_id: field(2).to_string(),
            relevant: parse_label(field(3), line)?,
        };
        let query_id = field(0).to_string();
        let items = by_query.entry(query_id.clone()).or_insert_with(|| {
            order.push(query_id.clone());
            Vec::new()
        });
        if items.iter().any(|i| i.rank == rank) {
            return Err(EvalError::BadRow {
                line,
                message: format!("duplicate rank {rank} for query `{query_id}`"),
            });
        }
        items.push(item);
    }
    Ok(order
        .into_iter()
        .map(|query_id| {
            let mut items = by_query.remove(&query_id).unwrap_or_default();
            items.sort_by_key(|i| i.rank);
            LabeledQuery { query_id, items }
        })
        .collect())
}

pub fn read_agreement_csv<R: Read>(input: R) -> Result<(Vec<bool>, Vec<bool>), EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let cols = column_indices(&mut reader, &AGREEMENT_COLUMNS)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        a.push(parse_label(row.get(cols[1]).unwrap_or(""), line)?);
        b.push(parse_label(row.get(cols[2]).unwrap_or(""), line)?);
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub labeled: usize,
    pub positives: usize,
    /// Precision over the first `min(k, labeled)` items.
    pub precision_at_k: f64,
    pub pr_points: Vec<PrPoint<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub k: usize,
    pub queries: Vec<QueryMetrics>,
    pub mean_precision_at_k: f64,
}

impl RankingReport {
    pub fn compute(queries: &[LabeledQuery], k: usize) -> Result<Self, EvalError> {
        if k == 0 {
            return Err(EvalError::InvalidK { k, len: 0 });
        }
        let mut out = Vec::with_capacity(queries.len());
        for q in queries {
            let labels = q.labels();
            let positives = labels.iter().filter(|&&l| l).count();
            out.push(QueryMetrics {
                query_id: q.query_id.clone(),
                labeled: labels.len(),
                positives,
                precision_at_k: precision_at_k(&labels, k.min(labels.len()))?,
                pr_points: if positives == 0 {
                    Vec::new()
                } else {
                    precision_recall_points(&labels)?
                },
            });
        }
        let mean = if out.is_empty() {
            0.0
        } else {
            out.iter().map(|q| q.precision_at_k).sum::<f64>() / out.len() as f64
        };
        Ok(Self {
            k,
            queries: out,
            mean_precision_at_k: mean,
        })
    }

    /// Plot-ready `query_id,rank,recall,precision` rows.
    pub fn write_pr_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["query_id", "rank", "recall", "precision"])
            .map_err(csv_err)?;
        for q in &self.queries {
            for p in &q.pr_points {
                w.write_record([
                    q.query_id.as_str(),
                    &p.rank.to_string(),
                    &p.recall.to_string(),
                    &p.precision.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| EvalError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub items: usize,
    pub confusion: Confusion,
    pub metrics: AgreementMetrics<f64>,
}

impl AgreementReport {
    pub fn compute(a: &[bool], b: &[bool]) -> Result<Self, EvalError> {
        Ok(Self {
            items: a.len(),
            confusion: Confusion::from_labels(a, b)?,
            metrics: agreement_suite(a, b)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_csv_groups_and_sorts() {
        let csv = "query_id,rank,relation_id,label\nq2,2,b,0\nq1,1,x,1\nq2,1,a,1\nq1,2,y,0\n";
        let qs = read_label_csv(csv.as_bytes()).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].query_id, "q2");
        assert_eq!(qs[0].labels(), vec![true, false]);
        let report = RankingReport::compute(&qs, 1).unwrap();
        assert_eq!(report.mean_precision_at_k, 1.0);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "query_id,rank,label\nq,1,1\n";
        assert_eq!(
            read_label_csv(csv.as_bytes()),
            Err(EvalError::MissingColumn("relation_id".into()))
        );
        assert_eq!(
            read_agreement_csv("item_id,label_a\n1,1\n".as_bytes()),
            Err(EvalError::MissingColumn("label_b".into()))
        );
    }

    #[test]
    fn bad_labels_and_duplicate_ranks() {
        assert!(matches!(
            read_label_csv("query_id,rank,relation_id,label\nq,1,a,2\n".as_bytes()),
            Err(EvalError::BadRow { line: 2, .. })
        ));
        assert!(matches!(
            read_label_csv("query_id,rank,relation_id,label\nq,1,a,1\nq,1,b,0\n".as_bytes()),
            Err(EvalError::BadRow { line: 3, .. })
        ));
    }

    #[test]
    fn pr_csv_rows() {
        let qs = read_label_csv("query_id,rank,relation_id,label\nq,1,a,1\nq,2,b,0\n".as_bytes())
            .unwrap();
        let mut buf = Vec::new();
        RankingReport::compute(&qs, 20).unwrap().write_pr_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query_id,rank,recall,precision\nq,1,1,1\nq,2,1,0.5\n"
        );
    }

    #[test]
    fn agreement_report() {
        let (a, b) =
            read_agreement_csv("item_id,label_a,label_b\n1,1,1\n2,1,0\n3,0,0\n4,0,1\n".as_bytes())
                .unwrap();
        let r = AgreementReport::compute(&a, &b).unwrap();
        assert_eq!(r.metrics.kappa, 0.0);
        assert_eq!(r.metrics.accuracy, 0.5);
    }
}
