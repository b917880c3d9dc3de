//! Domain types shared across the pipeline.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hash::Fnv1a64;
use crate::normalize::{self, NormalizationConfig, NormalizeError};

/// Separator byte between hashed identity fields (ASCII unit separator).
const FIELD_SEPARATOR: u8 = 0x1F;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("invalid relation: {0}")]
    InvalidRelation(String),
    #[error("confidence {0} out of [0,1]")]
    ConfidenceOutOfRange(f64),
    #[error("invalid relation class `{0}` (expected DIRECT or INDIRECT)")]
    UnknownClass(String),
    #[error("invalid relation id `{0}` (expected up to 16 hex digits)")]
    MalformedId(String),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationClass {
    #[serde(rename = "DIRECT")]
    Direct,
    #[serde(rename = "INDIRECT")]
    Indirect,
}

impl RelationClass {
    pub const ALL: [RelationClass; 2] = [RelationClass::Direct, RelationClass::Indirect];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationClass::Direct => "DIRECT",
            RelationClass::Indirect => "INDIRECT",
        }
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive: accepts `direct`, `DIRECT`, `Indirect`, ...
impl FromStr for RelationClass {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("direct") {
            Ok(RelationClass::Direct)
        } else if s.eq_ignore_ascii_case("indirect") {
            Ok(RelationClass::Indirect)
        } else {
            Err(SchemaError::UnknownClass(s.to_string()))
        }
    }
}

/// Content hash identifying one relation instance.
///
/// Rendered as 16 lowercase hex digits in every text format so it survives
/// JSON consumers that parse numbers as doubles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RelationId(pub u64);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for RelationId {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || s.len() > 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(SchemaError::MalformedId(s.to_string()));
        }
        u64::from_str_radix(s, 16)
            .map(RelationId)
            .map_err(|_| SchemaError::MalformedId(s.to_string()))
    }
}

impl Serialize for RelationId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RelationId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Deterministic identity of a relation instance: FNV-1a 64 over
/// `arg1 \x1F arg2 \x1F class \x1F doc_id \x1F sentence_index`.
pub fn relation_id(
    arg1_norm: &str,
    arg2_norm: &str,
    class: RelationClass,
    doc_id: &str,
    sentence_index: u32,
) -> Result<RelationId, SchemaError> {
    for (name, value) in [("arg1", arg1_norm), ("arg2", arg2_norm), ("doc_id", doc_id)] {
        if value.is_empty() {
            return Err(SchemaError::InvalidRelation(format!("empty {name}")));
        }
    }
    let mut h = Fnv1a64::new();
    h.write(arg1_norm.as_bytes());
    h.write(&[FIELD_SEPARATOR]);
    h.write(arg2_norm.as_bytes());
    h.write(&[FIELD_SEPARATOR]);
    h.write(class.as_str().as_bytes());
    h.write(&[FIELD_SEPARATOR]);
    h.write(doc_id.as_bytes());
    h.write(&[FIELD_SEPARATOR]);
    h.write(sentence_index.to_string().as_bytes());
    Ok(RelationId(h.finish()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySurface {
    pub raw: String,
    pub normalized: String,
    pub token_count: usize,
}

impl EntitySurface {
    pub fn new(raw: &str, config: &NormalizationConfig) -> Result<Self, NormalizeError> {
        let normalized = normalize::normalize_surface(raw, config)?;
        let token_count = normalized.split(' ').count();
        Ok(Self {
            raw: raw.to_string(),
            normalized,
            token_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub sentence: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub url: String,
    pub sentence_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRelation {
    pub relation_id: RelationId,
    pub arg1: EntitySurface,
    pub arg2: EntitySurface,
    pub class: RelationClass,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl MechanismRelation {
    pub fn new(
        arg1: EntitySurface,
        arg2: EntitySurface,
        class: RelationClass,
        confidence: f64,
        provenance: Provenance,
    ) -> Result<Self, SchemaError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(SchemaError::ConfidenceOutOfRange(confidence));
        }
        if provenance.sentence.is_empty() {
            return Err(SchemaError::InvalidRelation("empty sentence".into()));
        }
        let relation_id = relation_id(
            &arg1.normalized,
            &arg2.normalized,
            class,
            &provenance.doc_id,
            provenance.sentence_index,
        )?;
        Ok(Self {
            relation_id,
            arg1,
            arg2,
            class,
            confidence,
            provenance,
        })
    }

    /// Recompute the id after an argument surface changed.
    pub fn refresh_id(&mut self) -> Result<(), SchemaError> {
        self.relation_id = relation_id(
            &self.arg1.normalized,
            &self.arg2.normalized,
            self.class,
            &self.provenance.doc_id,
            self.provenance.sentence_index,
        )?;
        Ok(())
    }

    /// Both arguments normalize to the same surface. Kept, but reported.
    pub fn is_self_relation(&self) -> bool {
        self.arg1.normalized == self.arg2.normalized
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefMention {
    pub text: String,
    pub sentence_index: u32,
}

/// Mentions of one entity within a document, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorefCluster {
    pub mentions: Vec<CorefMention>,
}

impl CorefCluster {
    pub fn new<I, T>(mentions: I) -> Self
    where
        I: IntoIterator<Item = (T, u32)>,
        T: Into<String>,
    {
        Self {
            mentions: mentions
                .into_iter()
                .map(|(text, sentence_index)| CorefMention {
                    text: text.into(),
                    sentence_index,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRelation {
    pub arg1: String,
    pub arg2: String,
    pub class: RelationClass,
    pub confidence: f64,
    /// Granular predicate text, carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
}

/// One upstream model output for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub sentence_index: u32,
    pub sentence: String,
    pub relations: Vec<RawRelation>,
    #[serde(default)]
    pub coref_clusters: Vec<CorefCluster>,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub url: String,
}

impl ExtractionRecord {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            doc_id: self.doc_id.clone(),
            sentence: self.sentence.clone(),
            title: self.title.clone(),
            url: self.url.clone(),
            sentence_index: self.sentence_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl ValidationError {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

/// Structural checks on a parsed record. Empty means valid.
pub fn validate_record(record: &ExtractionRecord) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    if record.doc_id.trim().is_empty() {
        errors.push(ValidationError::new("doc_id", "empty doc_id"));
    }
    if record.sentence.trim().is_empty() {
        errors.push(ValidationError::new("sentence", "empty sentence"));
    }
    for (i, rel) in record.relations.iter().enumerate() {
        if rel.arg1.trim().is_empty() {
            errors.push(ValidationError::new(
                format!("relations[{i}].arg1"),
                "empty entity span",
            ));
        }
        if rel.arg2.trim().is_empty() {
            errors.push(ValidationError::new(
                format!("relations[{i}].arg2"),
                "empty entity span",
            ));
        }
        if !(0.0..=1.0).contains(&rel.confidence) {
            errors.push(ValidationError::new(
                format!("relations[{i}].confidence"),
                "confidence out of [0,1]",
            ));
        }
    }
    for (c, cluster) in record.coref_clusters.iter().enumerate() {
        if cluster.mentions.is_empty() {
            errors.push(ValidationError::new(
                format!("coref_clusters[{c}]"),
                "empty coref cluster",
            ));
        }
        for (m, mention) in cluster.mentions.iter().enumerate() {
            if mention.text.trim().is_empty() {
                errors.push(ValidationError::new(
                    format!("coref_clusters[{c}][{m}].text"),
                    "empty entity span",
                ));
            }
        }
    }
    errors
}

/// [`validate_record`] plus a check that every argument survives normalization.
pub fn validate_record_with(
    record: &ExtractionRecord,
    config: &NormalizationConfig,
) -> Vec<ValidationError> {
    let mut errors = validate_record(record);
    for (i, rel) in record.relations.iter().enumerate() {
        for (side, raw) in [("arg1", &rel.arg1), ("arg2", &rel.arg2)] {
            if !raw.trim().is_empty() && normalize::normalize_surface(raw, config).is_err() {
                errors.push(ValidationError::new(
                    format!("relations[{i}].{side}"),
                    "entity span empty after normalization",
                ));
            }
        }
    }
    errors
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("e1 must contain at least one alternative")]
    EmptyE1,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("min_confidence {0} out of [0,1]")]
    InvalidMinConfidence(f64),
    #[error("{field}[{index}]: {source}")]
    Alternative {
        field: &'static str,
        index: usize,
        source: NormalizeError,
    },
}

impl QueryError {
    /// Name of the request field at fault.
    pub fn field(&self) -> &'static str {
        match self {
            QueryError::EmptyE1 => "e1",
            QueryError::InvalidK => "k",
            QueryError::InvalidMinConfidence(_) => "min_confidence",
            QueryError::Alternative { field, .. } => field,
        }
    }
}

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.9;

/// Structured query: alternatives per side, optional class filter.
///
/// An empty `e2_alternatives` makes the query open-ended: only the first
/// argument is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationQuery {
    pub e1_alternatives: Vec<String>,
    #[serde(default)]
    pub e2_alternatives: Vec<String>,
    #[serde(default)]
    pub class_filter: Option<RelationClass>,
    pub k: usize,
    #[serde(default)]
    pub symmetric: bool,
    pub min_confidence: f64,
}

impl RelationQuery {
    pub fn new<I, T>(e1: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Self {
            e1_alternatives: e1.into_iter().map(Into::into).collect(),
            e2_alternatives: Vec::new(),
            class_filter: None,
            k: DEFAULT_K,
            symmetric: false,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }

    pub fn with_e2<I, T>(mut self, e2: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        self.e2_alternatives = e2.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_class(mut self, class: Option<RelationClass>) -> Self {
        self.class_filter = class;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_min_confidence(mut self, min_confidence: f64) -> Self {
        self.min_confidence = min_confidence;
        self
    }

    pub fn is_open_ended(&self) -> bool {
        self.e2_alternatives.is_empty()
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.e1_alternatives.is_empty() {
            return Err(QueryError::EmptyE1);
        }
        if self.k == 0 {
            return Err(QueryError::InvalidK);
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(QueryError::InvalidMinConfidence(self.min_confidence));
        }
        Ok(())
    }

    /// Validate and normalize every alternative with the KB's configuration.
    pub fn normalized(&self, config: &NormalizationConfig) -> Result<Self, QueryError> {
        self.validate()?;
        let norm = |field: &'static str, alts: &[String]| -> Result<Vec<String>, QueryError> {
            alts.iter()
                .enumerate()
                .map(|(index, a)| {
                    normalize::normalize_surface(a, config).map_err(|source| {
                        QueryError::Alternative {
                            field,
                            index,
                            source,
                        }
                    })
                })
                .collect()
        };
        Ok(Self {
            e1_alternatives: norm("e1", &self.e1_alternatives)?,
            e2_alternatives: norm("e2", &self.e2_alternatives)?,
            ..self.clone()
        })
    }
}

/// A relation with its query score.
///
/// `reversed` is set when the best score came from matching the query's
/// first side against the relation's second argument (symmetric queries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResult<S> {
    pub relation: MechanismRelation,
    pub score: S,
    pub matched_e1_alt: usize,
    pub matched_e2_alt: Option<usize>,
    #[serde(default)]
    pub reversed: bool,
}

/// Result order: score descending, then relation id ascending.
pub fn rank_order<S: PartialOrd>(
    score_a: S,
    id_a: RelationId,
    score_b: S,
    id_b: RelationId,
) -> Ordering {
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(Ordering::Equal)
        .then(id_a.cmp(&id_b))
}

impl<S: PartialOrd + Copy> ScoredResult<S> {
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        rank_order(
            self.score,
            self.relation.relation_id,
            other.score,
            other.relation.relation_id,
        )
    }
}

pub fn sort_results<S: PartialOrd + Copy>(results: &mut [ScoredResult<S>]) {
    results.sort_by(|a, b| a.rank_cmp(b));
}
