//! Extraction records in, canonical relation instances out.
//!
//! Stages: parse JSON-Lines, validate, confidence filter, normalize surfaces,
//! coreference unification, dedup by relation id. Chunks of input lines are
//! processed in parallel and merged in input order, so the output does not
//! depend on the worker count.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{unify_corefs, NormalizationConfig};
use crate::schema::{
    validate_record_with, EntitySurface, ExtractionRecord, MechanismRelation, RelationId,
    SchemaError,
};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.90;
const CHUNK_LINES: usize = 4096;
const MAX_REPORTED_REJECTIONS: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("confidence threshold {0} out of [0,1]")]
    InvalidThreshold(f64),
    #[error("{path}: {source}")]
    Input { path: String, source: io::Error },
    #[error("writing relations: {0}")]
    Output(#[source] io::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("line {line}: read error: {message}")]
    Io { line: usize, message: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::MalformedJson { line, .. }
            | ParseError::SchemaViolation { line, .. }
            | ParseError::Io { line, .. } => *line,
        }
    }
}

/// Parse one JSON-Lines line (1-based `line` number for error positions).
pub fn parse_line(line: usize, text: &str) -> Result<ExtractionRecord, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ParseError::MalformedJson {
            line,
            message: e.to_string(),
        })?;
    serde_json::from_value(value).map_err(|e| ParseError::SchemaViolation {
        line,
        message: e.to_string(),
    })
}

/// Lazily parse a JSON-Lines stream. Blank lines are skipped; bad lines
/// yield positioned errors without ending the stream.
pub fn parse_stream<I>(lines: I) -> impl Iterator<Item = Result<ExtractionRecord, ParseError>>
where
    I: IntoIterator<Item = io::Result<String>>,
{
    lines
        .into_iter()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(parse_line(i + 1, &text)),
            Err(e) => Some(Err(ParseError::Io {
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

/// Keep relations with `confidence >= threshold`.
pub fn filter_confidence(
    relations: impl IntoIterator<Item = MechanismRelation>,
    threshold: f64,
) -> Result<Vec<MechanismRelation>, IngestError> {
    check_threshold(threshold)?;
    Ok(relations
        .into_iter()
        .filter(|r| r.confidence >= threshold)
        .collect())
}

fn check_threshold(threshold: f64) -> Result<(), IngestError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(IngestError::InvalidThreshold(threshold))
    }
}

/// First occurrence of each relation id wins; order preserved.
pub fn deduplicate(relations: impl IntoIterator<Item = MechanismRelation>) -> Vec<MechanismRelation> {
    let mut seen = HashSet::new();
    relations
        .into_iter()
        .filter(|r| seen.insert(r.relation_id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: String,
    pub line: usize,
    pub message: String,
}

/// Counters for one ingest run. `relations_kept` always equals
/// `relations_seen - relations_below_threshold - relations_deduplicated`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub records_rejected: usize,
    pub relations_seen: usize,
    pub relations_below_threshold: usize,
    pub relations_deduplicated: usize,
    pub relations_kept: usize,
    pub self_relations: usize,
    pub coref_replaced: usize,
    pub coref_ambiguous: usize,
    /// First rejections, for diagnostics.
    pub rejections: Vec<Rejection>,
}

impl IngestReport {
    pub fn reconciles(&self) -> bool {
        self.relations_seen
            >= self.relations_below_threshold + self.relations_deduplicated
            && self.relations_kept
                == self.relations_seen - self.relations_below_threshold - self.relations_deduplicated
    }

    fn reject(&mut self, source: &str, line: usize, message: String) {
        self.records_rejected += 1;
        if self.rejections.len() < MAX_REPORTED_REJECTIONS {
            self.rejections.push(Rejection {
                source: source.to_string(),
                line,
                message,
            });
        }
    }
}

/// Relations extracted from one accepted record, before deduplication.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRelations {
    pub relations: Vec<MechanismRelation>,
    pub seen: usize,
    pub below_threshold: usize,
    pub coref_replaced: usize,
    pub coref_ambiguous: usize,
}

/// Validate, filter, normalize and unify one record. `Err` carries the
/// validation messages of a rejected record.
pub fn process_record(
    record: &ExtractionRecord,
    config: &NormalizationConfig,
    threshold: f64,
) -> Result<RecordRelations, Vec<String>> {
    let errors = validate_record_with(record, config);
    if !errors.is_empty() {
        return Err(errors.iter().map(ToString::to_string).collect());
    }
    let provenance = record.provenance();
    let mut relations = Vec::new();
    let mut below_threshold = 0;
    for raw in &record.relations {
        if raw.confidence < threshold {
            below_threshold += 1;
            continue;
        }
        let build = || -> Result<MechanismRelation, SchemaError> {
            MechanismRelation::new(
                EntitySurface::new(&raw.arg1, config)?,
                EntitySurface::new(&raw.arg2, config)?,
                raw.class,
                raw.confidence,
                provenance.clone(),
            )
        };
        relations.push(build().map_err(|e| vec![e.to_string()])?);
    }
    let unified = unify_corefs(relations, &record.coref_clusters, config)
        .map_err(|e| vec![e.to_string()])?;
    Ok(RecordRelations {
        relations: unified.relations,
        seen: record.relations.len(),
        below_threshold,
        coref_replaced: unified.replaced,
        coref_ambiguous: unified.ambiguous,
    })
}

/// Streaming ingest with first-occurrence deduplication across all inputs.
pub struct Ingestor {
    config: NormalizationConfig,
    threshold: f64,
    seen_ids: HashSet<RelationId>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new(config: NormalizationConfig, threshold: f64) -> Result<Self, IngestError> {
        check_threshold(threshold)?;
        crate::normalize::lemmatizer_for(&config.lemmatizer)
            .map_err(|e| IngestError::Schema(SchemaError::Normalize(e)))?;
        Ok(Self {
            config,
            threshold,
            seen_ids: HashSet::new(),
            report: IngestReport::default(),
        })
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }

    /// Merge one processed record; returns the relations that survive dedup.
    fn merge(&mut self, outcome: RecordRelations) -> Vec<MechanismRelation> {
        let r = &mut self.report;
        r.relations_seen += outcome.seen;
        r.relations_below_threshold += outcome.below_threshold;
        r.coref_replaced += outcome.coref_replaced;
        r.coref_ambiguous += outcome.coref_ambiguous;
        let mut kept = Vec::with_capacity(outcome.relations.len());
        for rel in outcome.relations {
            if self.seen_ids.insert(rel.relation_id) {
                if rel.is_self_relation() {
                    r.self_relations += 1;
                }
                r.relations_kept += 1;
                kept.push(rel);
            } else {
                r.relations_deduplicated += 1;
            }
        }
        kept
    }

    /// Ingest already-parsed records.
    pub fn ingest_records<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a ExtractionRecord>,
    ) -> Vec<MechanismRelation> {
        let mut out = Vec::new();
        for (i, record) in records.into_iter().enumerate() {
            self.report.records_read += 1;
            match process_record(record, &self.config, self.threshold) {
                Ok(outcome) => out.extend(self.merge(outcome)),
                Err(messages) => self.report.reject("<memory>", i + 1, messages.join("; ")),
            }
        }
        out
    }

    /// Ingest one JSON-Lines source, writing canonical relation lines to `out`.
    pub fn ingest_reader<R: BufRead, W: Write>(
        &mut self,
        source: &str,
        reader: R,
        out: &mut W,
    ) -> Result<(), IngestError> {
        let mut lines = reader.lines().enumerate();
        let mut exhausted = false;
        while !exhausted {
            let mut chunk = Vec::with_capacity(CHUNK_LINES);
            let mut read = 0;
            for (i, line) in lines.by_ref() {
                read += 1;
                let line = line.map_err(|e| IngestError::Input {
                    path: source.to_string(),
                    source: e,
                })?;
                if !line.trim().is_empty() {
                    chunk.push((i + 1, line));
                }
                if read == CHUNK_LINES {
                    break;
                }
            }
            exhausted = read < CHUNK_LINES;

            let config = &self.config;
            let threshold = self.threshold;
            let processed: Vec<(usize, Result<RecordRelations, String>)> = chunk
                .par_iter()
                .map(|(n, text)| {
                    let result = parse_line(*n, text)
                        .map_err(|e| e.to_string())
                        .and_then(|rec| {
                            process_record(&rec, config, threshold).map_err(|m| m.join("; "))
                        });
                    (*n, result)
                })
                .collect();

            for (n, result) in processed {
                self.report.records_read += 1;
                match result {
                    Ok(outcome) => {
                        for rel in self.merge(outcome) {
                            serde_json::to_writer(&mut *out, &rel)
                                .map_err(|e| IngestError::Output(e.into()))?;
                            out.write_all(b"\n").map_err(IngestError::Output)?;
                        }
                    }
                    Err(message) => self.report.reject(source, n, message),
                }
            }
        }
        Ok(())
    }

    pub fn ingest_path<W: Write>(&mut self, path: &Path, out: &mut W) -> Result<(), IngestError> {
        let reader = open_input(path).map_err(|source| IngestError::Input {
            path: path.display().to_string(),
            source,
        })?;
        self.ingest_reader(&path.display().to_string(), reader, out)
    }
}

/// Open a file for line reading, transparently decompressing `.gz`.
pub fn open_input(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Read canonical relation lines written by [`Ingestor`].
pub fn read_relations<R: BufRead>(reader: R) -> Result<Vec<MechanismRelation>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ParseError::Io {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rel = serde_json::from_str(&line).map_err(|e| {
            if e.is_syntax() || e.is_eof() {
                ParseError::MalformedJson {
                    line: i + 1,
                    message: e.to_string(),
                }
            } else {
                ParseError::SchemaViolation {
                    line: i + 1,
                    message: e.to_string(),
                }
            }
        })?;
        out.push(rel);
    }
    Ok(out)
}
