//! Entity vocabulary, vector store, postings and relation retrieval.
//!
//! A relation is scored against a query as the minimum over its two sides of
//! the best similarity between the relation argument and that side's query
//! alternatives. [`search_bruteforce`] scores every relation and is the
//! reference; [`search_threshold`] walks per-side entity streams in
//! descending similarity and stops once no unseen relation can enter the
//! top k.

mod search;
mod storage;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider};
use crate::normalize::NormalizationConfig;
use crate::scalar::Scalar;
use crate::schema::{MechanismRelation, QueryError, RelationClass, RelationId};

pub use search::{
    score_relation, search_bruteforce, search_threshold, topk_entities, SearchOutput, SearchStats,
};
pub use storage::{load_index, write_index_dir};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty relation set")]
    EmptyKb,
    #[error("duplicate relation id {0}")]
    DuplicateRelation(RelationId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("index was built with provider `{expected}` (dim {expected_dim}), got `{actual}` (dim {actual_dim})")]
    ProviderMismatch {
        expected: String,
        expected_dim: usize,
        actual: String,
        actual_dim: usize,
    },
    #[error("normalization config differs from the one the index was built with")]
    NormalizationMismatch,
    #[error("index directory {0} already exists (use force to replace it)")]
    AlreadyExists(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index: {0}")]
    Format(String),
}

/// Unique normalized surfaces with dense ids in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn intern(&mut self, surface: &str) -> u32 {
        if let Some(&id) = self.ids.get(surface) {
            return id;
        }
        let id = u32::try_from(self.surfaces.len()).expect("vocabulary exceeds u32 ids");
        self.surfaces.push(surface.to_string());
        self.ids.insert(surface.to_string(), id);
        id
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArgPosition {
    First = 1,
    Second = 2,
}

/// One entry of an entity's posting list. `relation` is the relation's dense
/// slot in the index; [`KbIndex::relation`] resolves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub relation: u32,
    pub position: ArgPosition,
}

impl Posting {
    pub(crate) fn encode(self) -> u64 {
        (u64::from(self.relation) << 1) | (self.position as u64 - 1)
    }

    pub(crate) fn decode(value: u64) -> Option<Self> {
        let relation = u32::try_from(value >> 1).ok()?;
        let position = if value & 1 == 0 {
            ArgPosition::First
        } else {
            ArgPosition::Second
        };
        Some(Self { relation, position })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub relations: usize,
    pub vocabulary: usize,
    pub postings: usize,
    pub direct: usize,
    pub indirect: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub normalization: NormalizationConfig,
    pub provider: String,
    pub dim: usize,
    /// Seconds since the Unix epoch.
    pub build_timestamp: u64,
    pub counts: ManifestCounts,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub normalization: NormalizationConfig,
    pub build_timestamp: u64,
    pub batch_size: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            normalization: NormalizationConfig::default(),
            build_timestamp: 0,
            batch_size: DEFAULT_EMBED_BATCH,
        }
    }
}

/// Immutable searchable KB.
#[derive(Debug, Clone)]
pub struct KbIndex<S> {
    vocab: Vocabulary,
    vectors: Vec<S>,
    postings: Vec<Vec<Posting>>,
    relations: Vec<MechanismRelation>,
    relation_args: Vec<[u32; 2]>,
    by_id: HashMap<RelationId, u32>,
    manifest: Manifest,
}

impl<S: Scalar> KbIndex<S> {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vector(&self, entity: u32) -> &[S] {
        let d = self.dim();
        &self.vectors[entity as usize * d..(entity as usize + 1) * d]
    }

    pub fn postings(&self, entity: u32) -> &[Posting] {
        &self.postings[entity as usize]
    }

    pub fn relations(&self) -> &[MechanismRelation] {
        &self.relations
    }

    pub fn relation(&self, slot: u32) -> &MechanismRelation {
        &self.relations[slot as usize]
    }

    /// Vocabulary ids of a relation's arguments.
    pub fn relation_args(&self, slot: u32) -> [u32; 2] {
        self.relation_args[slot as usize]
    }

    pub fn get(&self, id: RelationId) -> Option<&MechanismRelation> {
        self.by_id.get(&id).map(|&slot| self.relation(slot))
    }

    /// Fail unless `provider` is the encoder this index was built with.
    pub fn check_provider(&self, provider: &dyn EmbeddingProvider<S>) -> Result<(), IndexError> {
        if provider.name() != self.manifest.provider || provider.dim() != self.manifest.dim {
            return Err(IndexError::ProviderMismatch {
                expected: self.manifest.provider.clone(),
                expected_dim: self.manifest.dim,
                actual: provider.name().to_string(),
                actual_dim: provider.dim(),
            });
        }
        Ok(())
    }

    pub fn check_normalization(&self, config: &NormalizationConfig) -> Result<(), IndexError> {
        if config != &self.manifest.normalization {
            return Err(IndexError::NormalizationMismatch);
        }
        Ok(())
    }

    /// Assemble from parts, checking the structural invariants.
    pub(crate) fn from_parts(
        vocab: Vocabulary,
        vectors: Vec<S>,
        postings: Vec<Vec<Posting>>,
        relations: Vec<MechanismRelation>,
        manifest: Manifest,
    ) -> Result<Self, IndexError> {
        let bad = |m: String| Err(IndexError::Format(m));
        if vectors.len() != vocab.len() * manifest.dim {
            return bad(format!(
                "{} vector values for {} entities of dim {}",
                vectors.len(),
                vocab.len(),
                manifest.dim
            ));
        }
        if postings.len() != vocab.len() {
            return bad(format!(
                "{} posting lists for {} entities",
                postings.len(),
                vocab.len()
            ));
        }
        let mut relation_args = vec![[u32::MAX; 2]; relations.len()];
        for (entity, list) in postings.iter().enumerate() {
            for p in list {
                let Some(args) = relation_args.get_mut(p.relation as usize) else {
                    return bad(format!("posting references relation slot {}", p.relation));
                };
                let side = p.position as usize - 1;
                if args[side] != u32::MAX {
                    return bad(format!("relation slot {} posted twice at one position", p.relation));
                }
                args[side] = entity as u32;
            }
        }
        let mut by_id = HashMap::with_capacity(relations.len());
        for (slot, (rel, args)) in relations.iter().zip(&relation_args).enumerate() {
            if args.contains(&u32::MAX) {
                return bad(format!("relation {} missing from postings", rel.relation_id));
            }
            if vocab.surface(args[0]) != rel.arg1.normalized
                || vocab.surface(args[1]) != rel.arg2.normalized
            {
                return bad(format!("postings disagree with relation {}", rel.relation_id));
            }
            if by_id.insert(rel.relation_id, slot as u32).is_some() {
                return Err(IndexError::DuplicateRelation(rel.relation_id));
            }
        }
        let counts = count(&vocab, &relations);
        if counts != manifest.counts {
            return bad(format!(
                "manifest counts {:?} do not match stores {:?}",
                manifest.counts, counts
            ));
        }
        Ok(Self {
            vocab,
            vectors,
            postings,
            relations,
            relation_args,
            by_id,
            manifest,
        })
    }
}

fn count(vocab: &Vocabulary, relations: &[MechanismRelation]) -> ManifestCounts {
    let direct = relations
        .iter()
        .filter(|r| r.class == RelationClass::Direct)
        .count();
    ManifestCounts {
        relations: relations.len(),
        vocabulary: vocab.len(),
        postings: relations.len() * 2,
        direct,
        indirect: relations.len() - direct,
    }
}

/// Index the unique argument surfaces of `relations` with `provider`.
pub fn build_index<S, P>(
    relations: Vec<MechanismRelation>,
    provider: &P,
    options: &BuildOptions,
) -> Result<KbIndex<S>, IndexError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
{
    if relations.is_empty() {
        return Err(IndexError::EmptyKb);
    }
    let mut vocab = Vocabulary::default();
    let mut postings: Vec<Vec<Posting>> = Vec::new();
    for (slot, rel) in relations.iter().enumerate() {
        let slot = u32::try_from(slot).expect("relation count exceeds u32 slots");
        for (surface, position) in [
            (&rel.arg1.normalized, ArgPosition::First),
            (&rel.arg2.normalized, ArgPosition::Second),
        ] {
            let id = vocab.intern(surface) as usize;
            if id == postings.len() {
                postings.push(Vec::new());
            }
            postings[id].push(Posting {
                relation: slot,
                position,
            });
        }
    }

    let dim = provider.dim();
    let batch = options.batch_size.max(1);
    let embedded: Vec<Vec<S>> = vocab
        .surfaces()
        .par_chunks(batch)
        .map(|texts| {
            let vectors = provider.embed_batch(texts)?;
            if vectors.len() != texts.len() {
                return Err(EmbedError::ProviderProtocolError(format!(
                    "{} vectors for {} texts",
                    vectors.len(),
                    texts.len()
                )));
            }
            let mut flat = Vec::with_capacity(texts.len() * dim);
            for v in vectors {
                if v.dim() != dim {
                    return Err(EmbedError::DimMismatch {
                        expected: dim,
                        actual: v.dim(),
                    });
                }
                flat.extend_from_slice(v.values());
            }
            Ok(flat)
        })
        .collect::<Result<_, EmbedError>>()?;
    let vectors = embedded.concat();

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        normalization: options.normalization.clone(),
        provider: provider.name().to_string(),
        dim,
        build_timestamp: options.build_timestamp,
        counts: count(&vocab, &relations),
    };
    KbIndex::from_parts(vocab, vectors, postings, relations, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FallbackEmbedder;
    use crate::schema::{EntitySurface, Provenance};

    pub(crate) fn rel(a1: &str, a2: &str, class: RelationClass, idx: u32) -> MechanismRelation {
        let cfg = NormalizationConfig::default();
        MechanismRelation::new(
            EntitySurface::new(a1, &cfg).unwrap(),
            EntitySurface::new(a2, &cfg).unwrap(),
            class,
            0.95,
            Provenance {
                doc_id: "doc".into(),
                sentence: format!("sentence {idx}"),
                title: String::new(),
                url: String::new(),
                sentence_index: idx,
            },
        )
        .unwrap()
    }

    #[test]
    fn shared_entity_gives_three_surfaces() {
        let rels = vec![
            rel("warm climate", "coronavirus", RelationClass::Indirect, 0),
            rel("microscope", "coronavirus", RelationClass::Indirect, 1),
        ];
        let idx: KbIndex<f32> =
            build_index(rels, &FallbackEmbedder::new(32), &BuildOptions::default()).unwrap();
        assert_eq!(idx.vocabulary().len(), 3);
        assert_eq!(idx.manifest().counts.vocabulary, 3);
        assert_eq!(idx.manifest().counts.indirect, 2);
    }

    #[test]
    fn empty_input_is_rejected() {
        let r: Result<KbIndex<f32>, _> =
            build_index(vec![], &FallbackEmbedder::new(8), &BuildOptions::default());
        assert!(matches!(r, Err(IndexError::EmptyKb)));
    }

    #[test]
    fn every_relation_posted_twice() {
        let words = ["a b", "c", "d e", "f", "g", "a b", "c", "h", "i", "j"];
        let rels: Vec<_> = (0..10)
            .map(|i| rel(words[i], words[(i * 3 + 1) % 10], RelationClass::Direct, i as u32))
            .collect();
        let idx: KbIndex<f64> =
            build_index(rels, &FallbackEmbedder::new(16), &BuildOptions::default()).unwrap();
        let mut counts = HashMap::new();
        for e in 0..idx.vocabulary().len() as u32 {
            for p in idx.postings(e) {
                *counts.entry((p.relation, p.position)).or_insert(0) += 1;
            }
        }
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&c| c == 1));
        for slot in 0..10u32 {
            let r = idx.relation(slot);
            assert_eq!(idx.get(r.relation_id), Some(r));
        }
    }

    #[test]
    fn duplicate_relations_rejected() {
        let r = rel("a", "b", RelationClass::Direct, 0);
        let out: Result<KbIndex<f32>, _> = build_index(
            vec![r.clone(), r],
            &FallbackEmbedder::new(8),
            &BuildOptions::default(),
        );
        assert!(matches!(out, Err(IndexError::DuplicateRelation(_))));
    }

    struct Failing;
    impl EmbeddingProvider<f32> for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn dim(&self) -> usize {
            4
        }
        fn embed_batch(
            &self,
            _: &[String],
        ) -> Result<Vec<crate::EmbeddingVector<f32>>, EmbedError> {
            Err(EmbedError::ProviderUnavailable("down".into()))
        }
    }

    #[test]
    fn provider_failure_aborts_build() {
        let r = build_index(
            vec![rel("a", "b", RelationClass::Direct, 0)],
            &Failing,
            &BuildOptions::default(),
        );
        assert!(matches!(
            r,
            Err(IndexError::Embed(EmbedError::ProviderUnavailable(_)))
        ));
    }

    #[test]
    fn posting_codec() {
        for p in [
            Posting {
                relation: 0,
                position: ArgPosition::First,
            },
            Posting {
                relation: u32::MAX,
                position: ArgPosition::Second,
            },
        ] {
            assert_eq!(Posting::decode(p.encode()), Some(p));
        }
    }
}
