//! Surface normalization and within-document coreference unification.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::schema::{CorefCluster, CorefMention, EntitySurface, MechanismRelation, SchemaError};

pub const SUFFIX_RULES: &str = "suffix-rules";
pub const IDENTITY: &str = "identity";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("text is empty after normalization")]
    EmptyAfterNormalization,
    #[error("unknown lemmatizer `{0}`")]
    UnknownLemmatizer(String),
}

/// Recorded in the index manifest; queries must be normalized with the
/// same configuration the KB was built with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub lemmatize: bool,
    pub lemmatizer: String,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            lemmatize: true,
            lemmatizer: SUFFIX_RULES.to_string(),
        }
    }
}

/// Token-level lemmatization strategy.
pub trait Lemmatizer: Send + Sync {
    fn name(&self) -> &str;
    fn lemmatize(&self, token: &str) -> String;
}

/// Conservative English plural stripping. See [`lemmatize_token`].
#[derive(Debug, Default, Clone, Copy)]
pub struct SuffixRules;

impl Lemmatizer for SuffixRules {
    fn name(&self) -> &str {
        SUFFIX_RULES
    }

    fn lemmatize(&self, token: &str) -> String {
        lemmatize_token(token)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityLemmatizer;

impl Lemmatizer for IdentityLemmatizer {
    fn name(&self) -> &str {
        IDENTITY
    }

    fn lemmatize(&self, token: &str) -> String {
        token.to_string()
    }
}

pub fn lemmatizer_for(name: &str) -> Result<&'static dyn Lemmatizer, NormalizeError> {
    match name {
        SUFFIX_RULES => Ok(&SuffixRules),
        IDENTITY => Ok(&IdentityLemmatizer),
        other => Err(NormalizeError::UnknownLemmatizer(other.to_string())),
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn strip_suffix_chars(token: &str, n: usize) -> &str {
    let cut = token
        .char_indices()
        .rev()
        .nth(n - 1)
        .map(|(i, _)| i)
        .unwrap_or(0);
    &token[..cut]
}

fn keeps_final_s(stem: &str) -> bool {
    stem.ends_with("ss") || stem.ends_with("us") || stem.ends_with("is")
}

/// Ordered plural rules, first match wins:
///
/// 1. `-ies` → `-y` when the token is longer than 4 characters;
/// 2. `-ches`, `-shes`, `-xes`, `-zes` drop `es`; `-ses` drops `es` only when
///    the stem keeps a protected `ss`/`us`/`is` ending (`viruses`, `classes`),
///    otherwise falls through to rule 3 (`diseases` → `disease`);
/// 3. a trailing `s` is dropped when the token is longer than 3 characters and
///    does not end in `ss`, `us` or `is`.
///
/// Every output is a fixed point of the rules.
pub fn lemmatize_token(token: &str) -> String {
    let len = char_len(token);
    if len > 4 && token.ends_with("ies") {
        return format!("{}y", strip_suffix_chars(token, 3));
    }
    for suffix in ["ches", "shes", "xes", "zes"] {
        if token.ends_with(suffix) {
            return strip_suffix_chars(token, 2).to_string();
        }
    }
    if token.ends_with("ses") {
        let stem = strip_suffix_chars(token, 2);
        if keeps_final_s(stem) {
            return stem.to_string();
        }
    }
    if len > 3 && token.ends_with('s') && !keeps_final_s(token) {
        return strip_suffix_chars(token, 1).to_string();
    }
    token.to_string()
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// NFC, lowercase, punctuation to spaces, whitespace collapse, per-token
/// lemmatization.
pub fn normalize_surface(raw: &str, config: &NormalizationConfig) -> Result<String, NormalizeError> {
    let lemmatizer = lemmatizer_for(&config.lemmatizer)?;
    normalize_surface_with(raw, config, lemmatizer)
}

pub fn normalize_surface_with(
    raw: &str,
    config: &NormalizationConfig,
    lemmatizer: &dyn Lemmatizer,
) -> Result<String, NormalizeError> {
    let mut text: String = raw.nfc().collect();
    if config.lowercase {
        text = text.to_lowercase().nfc().collect();
    }
    if config.strip_punctuation {
        text = text
            .chars()
            .map(|c| if is_punctuation(c) { ' ' } else { c })
            .collect();
    }
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| {
            if config.lemmatize {
                lemmatizer.lemmatize(t)
            } else {
                t.to_string()
            }
        })
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(NormalizeError::EmptyAfterNormalization);
    }
    Ok(tokens.join(" "))
}

fn normalized_len(text: &str, config: &NormalizationConfig) -> usize {
    normalize_surface(text, config)
        .map(|s| char_len(&s))
        .unwrap_or(0)
}

/// The mention whose normalized form is longest (in characters); earliest
/// mention wins ties.
pub fn coref_representative<'a>(
    cluster: &'a CorefCluster,
    config: &NormalizationConfig,
) -> &'a CorefMention {
    let mut best = &cluster.mentions[0];
    let mut best_len = normalized_len(&best.text, config);
    for m in &cluster.mentions[1..] {
        let len = normalized_len(&m.text, config);
        if len > best_len {
            best = m;
            best_len = len;
        }
    }
    best
}

fn match_key(text: &str) -> String {
    text.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnifyOutcome {
    pub relations: Vec<MechanismRelation>,
    /// Arguments replaced by a cluster representative.
    pub replaced: usize,
    /// Arguments left unchanged because they match mentions of several clusters.
    pub ambiguous: usize,
}

/// Replace arguments that name a non-representative coreferent mention with
/// the cluster representative, recomputing relation ids.
pub fn unify_corefs(
    relations: Vec<MechanismRelation>,
    clusters: &[CorefCluster],
    config: &NormalizationConfig,
) -> Result<UnifyOutcome, SchemaError> {
    let mut outcome = UnifyOutcome {
        relations: Vec::with_capacity(relations.len()),
        replaced: 0,
        ambiguous: 0,
    };
    if clusters.is_empty() {
        outcome.relations = relations;
        return Ok(outcome);
    }

    let mut representatives = Vec::with_capacity(clusters.len());
    let mut by_mention: HashMap<String, Vec<usize>> = HashMap::new();
    for (ci, cluster) in clusters.iter().enumerate() {
        if cluster.mentions.is_empty() {
            representatives.push(None);
            continue;
        }
        let rep = coref_representative(cluster, config);
        representatives.push(EntitySurface::new(&rep.text, config).ok());
        for m in &cluster.mentions {
            let owners = by_mention.entry(match_key(&m.text)).or_default();
            if !owners.contains(&ci) {
                owners.push(ci);
            }
        }
    }

    for mut rel in relations {
        let mut changed = false;
        for arg in [&mut rel.arg1, &mut rel.arg2] {
            let key = match_key(&arg.raw);
            let Some(owners) = by_mention.get(&key) else {
                continue;
            };
            if owners.len() > 1 {
                outcome.ambiguous += 1;
                continue;
            }
            let Some(rep) = &representatives[owners[0]] else {
                continue;
            };
            if match_key(&rep.raw) != key {
                *arg = rep.clone();
                outcome.replaced += 1;
                changed = true;
            }
        }
        if changed {
            rel.refresh_id()?;
        }
        outcome.relations.push(rel);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Provenance, RelationClass};

    fn norm(s: &str) -> Result<String, NormalizeError> {
        normalize_surface(s, &NormalizationConfig::default())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(norm("Viral Binding,").unwrap(), "viral binding");
        assert_eq!(norm("dexamethasone injections").unwrap(), "dexamethasone injection");
        assert_eq!(norm("..."), Err(NormalizeError::EmptyAfterNormalization));
        assert_eq!(norm("  SARS-CoV-2   infection ").unwrap(), "sar cov 2 infection");
        assert_eq!(norm("“Warmer” climates!").unwrap(), "warmer climate");
    }

    #[test]
    fn normalize_respects_config_switches() {
        let cfg = NormalizationConfig {
            lowercase: false,
            strip_punctuation: false,
            lemmatize: false,
            lemmatizer: SUFFIX_RULES.into(),
        };
        assert_eq!(normalize_surface(" Genes,  X ", &cfg).unwrap(), "Genes, X");
        let bad = NormalizationConfig {
            lemmatizer: "porter".into(),
            ..Default::default()
        };
        assert_eq!(
            normalize_surface("x", &bad),
            Err(NormalizeError::UnknownLemmatizer("porter".into()))
        );
    }

    #[test]
    fn lemmatize_examples() {
        assert_eq!(lemmatize_token("viruses"), "virus");
        assert_eq!(lemmatize_token("analysis"), "analysis");
        assert_eq!(lemmatize_token("genes"), "gene");
        assert_eq!(lemmatize_token("studies"), "study");
        assert_eq!(lemmatize_token("ties"), "tie");
        assert_eq!(lemmatize_token("boxes"), "box");
        assert_eq!(lemmatize_token("patches"), "patch");
        assert_eq!(lemmatize_token("wishes"), "wish");
        assert_eq!(lemmatize_token("classes"), "class");
        assert_eq!(lemmatize_token("diseases"), "disease");
        assert_eq!(lemmatize_token("gas"), "gas");
        assert_eq!(lemmatize_token("class"), "class");
        assert_eq!(lemmatize_token("virus"), "virus");
        assert_eq!(lemmatize_token("protein"), "protein");
    }

    #[test]
    fn lemmatize_outputs_are_fixed_points() {
        for w in [
            "houses", "analyses", "viruses", "bases", "cases", "studies", "ses", "uses", "quizzes",
            "dresses", "mrnas", "cells", "séances", "ιούς",
        ] {
            let once = lemmatize_token(w);
            assert_eq!(lemmatize_token(&once), once, "{w}");
        }
    }

    fn cluster(texts: &[&str]) -> CorefCluster {
        CorefCluster::new(texts.iter().enumerate().map(|(i, t)| (*t, i as u32)))
    }

    #[test]
    fn representative_is_longest() {
        let cfg = NormalizationConfig::default();
        let c = cluster(&["it", "the SARS-CoV-2 virus", "the virus"]);
        assert_eq!(coref_representative(&c, &cfg).text, "the SARS-CoV-2 virus");
        let c = cluster(&["alone"]);
        assert_eq!(coref_representative(&c, &cfg).text, "alone");
        let c = cluster(&["abc", "xyz"]);
        assert_eq!(coref_representative(&c, &cfg).text, "abc");
    }

    #[test]
    fn representative_measures_normalized_length() {
        let cfg = NormalizationConfig::default();
        // "cells!!!!" normalizes to "cell" (4) and loses to "tissue" (6).
        let c = cluster(&["cells!!!!", "tissue"]);
        assert_eq!(coref_representative(&c, &cfg).text, "tissue");
    }

    fn rel(a1: &str, a2: &str) -> MechanismRelation {
        let cfg = NormalizationConfig::default();
        MechanismRelation::new(
            EntitySurface::new(a1, &cfg).unwrap(),
            EntitySurface::new(a2, &cfg).unwrap(),
            RelationClass::Indirect,
            0.95,
            Provenance {
                doc_id: "doc".into(),
                sentence: "s".into(),
                title: String::new(),
                url: String::new(),
                sentence_index: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn unify_replaces_pronoun() {
        let cfg = NormalizationConfig::default();
        let original = rel("it", "cell entry");
        let out = unify_corefs(
            vec![original.clone()],
            &[cluster(&["it", "the novel coronavirus"])],
            &cfg,
        )
        .unwrap();
        let r = &out.relations[0];
        assert_eq!(r.arg1.raw, "the novel coronavirus");
        assert_eq!(r.arg1.normalized, "the novel coronavirus");
        assert_ne!(r.relation_id, original.relation_id);
        assert_eq!(out.replaced, 1);
    }

    #[test]
    fn unify_matches_case_insensitively_after_trim() {
        let cfg = NormalizationConfig::default();
        let out = unify_corefs(
            vec![rel(" IT ", "x")],
            &[cluster(&["it", "the virus"])],
            &cfg,
        )
        .unwrap();
        assert_eq!(out.relations[0].arg1.normalized, "the virus");
    }

    #[test]
    fn unify_leaves_unmatched_and_clusterless() {
        let cfg = NormalizationConfig::default();
        let rels = vec![rel("drug", "disease")];
        let out = unify_corefs(rels.clone(), &[cluster(&["it", "the virus"])], &cfg).unwrap();
        assert_eq!(out.relations, rels);
        let out = unify_corefs(rels.clone(), &[], &cfg).unwrap();
        assert_eq!(out.relations, rels);
    }

    #[test]
    fn unify_flags_ambiguous_mentions() {
        let cfg = NormalizationConfig::default();
        let rels = vec![rel("it", "x")];
        let out = unify_corefs(
            rels.clone(),
            &[cluster(&["it", "the virus"]), cluster(&["it", "the host cell"])],
            &cfg,
        )
        .unwrap();
        assert_eq!(out.relations, rels);
        assert_eq!(out.ambiguous, 1);
    }
}
