use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{ArgPosition, IndexError, KbIndex};
use crate::embed::{dot, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::scalar::Scalar;
use crate::schema::{rank_order, MechanismRelation, RelationId, RelationQuery, ScoredResult};

/// Work counters for one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Entity-stream entries consumed, summed over query sides.
    pub entries_examined: usize,
    /// Relations whose score was computed.
    pub relations_scored: usize,
    pub vocabulary: usize,
    pub sides: usize,
    /// Stopped before exhausting the streams.
    pub early_terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput<S> {
    pub results: Vec<ScoredResult<S>>,
    pub stats: SearchStats,
}

/// Relation score from per-side similarities: the minimum of both sides, or
/// the first side alone for open-ended queries.
pub fn score_relation<S: Scalar>(sim1: S, sim2: Option<S>) -> S {
    match sim2 {
        Some(s2) if s2 < sim1 => s2,
        _ => sim1,
    }
}

/// The `k` most similar vocabulary entries, exact, ordered by similarity
/// descending then id ascending.
pub fn topk_entities<S: Scalar>(
    query: &EmbeddingVector<S>,
    index: &KbIndex<S>,
    k: usize,
) -> Result<Vec<(u32, S)>, IndexError> {
    if query.dim() != index.dim() {
        return Err(EmbedError::DimMismatch {
            expected: index.dim(),
            actual: query.dim(),
        }
        .into());
    }
    let mut all: Vec<(u32, S)> = (0..index.vocabulary().len() as u32)
        .map(|e| (e, dot(query.values(), index.vector(e))))
        .collect();
    let cmp = |a: &(u32, S), b: &(u32, S)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    let k = k.min(all.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(all)
}

/// Best similarity of one entity to a query side, with the alternative
/// that achieved it.
#[derive(Debug, Clone, Copy)]
struct SideSim<S> {
    sim: S,
    alt: u32,
}

/// Per-entity max over alternatives (first alternative wins ties).
fn side_similarities<S: Scalar>(index: &KbIndex<S>, alts: &[EmbeddingVector<S>]) -> Vec<SideSim<S>> {
    (0..index.vocabulary().len() as u32)
        .map(|e| {
            let row = index.vector(e);
            let mut best = SideSim {
                sim: dot(alts[0].values(), row),
                alt: 0,
            };
            for (i, alt) in alts.iter().enumerate().skip(1) {
                let s = dot(alt.values(), row);
                if s > best.sim {
                    best = SideSim { sim: s, alt: i as u32 };
                }
            }
            best
        })
        .collect()
}

/// Normalized, embedded query ready for scoring.
struct PreparedQuery<S> {
    query: RelationQuery,
    first: Vec<SideSim<S>>,
    second: Option<Vec<SideSim<S>>>,
}

fn prepare<S: Scalar>(
    query: &RelationQuery,
    index: &KbIndex<S>,
    provider: &dyn EmbeddingProvider<S>,
) -> Result<PreparedQuery<S>, IndexError> {
    index.check_provider(provider)?;
    let query = query.normalized(&index.manifest().normalization)?;
    let texts: Vec<String> = query
        .e1_alternatives
        .iter()
        .chain(&query.e2_alternatives)
        .cloned()
        .collect();
    let mut vectors = provider.embed_batch(&texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::ProviderProtocolError(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        ))
        .into());
    }
    if let Some(v) = vectors.iter().find(|v| v.dim() != index.dim()) {
        return Err(EmbedError::DimMismatch {
            expected: index.dim(),
            actual: v.dim(),
        }
        .into());
    }
    let second_alts = vectors.split_off(query.e1_alternatives.len());
    let first = side_similarities(index, &vectors);
    let second = (!second_alts.is_empty()).then(|| side_similarities(index, &second_alts));
    Ok(PreparedQuery {
        query,
        first,
        second,
    })
}

impl<S: Scalar> PreparedQuery<S> {
    fn sides(&self) -> usize {
        1 + usize::from(self.second.is_some())
    }

    fn admits(&self, rel: &MechanismRelation) -> bool {
        self.query.class_filter.is_none_or(|c| c == rel.class)
            && rel.confidence >= self.query.min_confidence
    }

    /// Score of a relation in one argument order.
    fn oriented(&self, first_arg: u32, second_arg: u32) -> (S, u32, Option<u32>) {
        let a = self.first[first_arg as usize];
        match &self.second {
            None => (a.sim, a.alt, None),
            Some(second) => {
                let b = second[second_arg as usize];
                (score_relation(a.sim, Some(b.sim)), a.alt, Some(b.alt))
            }
        }
    }

    /// Final score: forward order, or the better of both orders for
    /// symmetric queries (forward wins ties).
    fn score(&self, index: &KbIndex<S>, slot: u32) -> Candidate<S> {
        let [a1, a2] = index.relation_args(slot);
        let (mut score, mut e1_alt, mut e2_alt) = self.oriented(a1, a2);
        let mut reversed = false;
        if self.query.symmetric {
            let (s, x, y) = self.oriented(a2, a1);
            if s > score {
                (score, e1_alt, e2_alt, reversed) = (s, x, y, true);
            }
        }
        Candidate {
            score,
            id: index.relation(slot).relation_id,
            slot,
            e1_alt,
            e2_alt,
            reversed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<S> {
    score: S,
    id: RelationId,
    slot: u32,
    e1_alt: u32,
    e2_alt: Option<u32>,
    reversed: bool,
}

impl<S: Scalar> Candidate<S> {
    fn into_result(self, index: &KbIndex<S>) -> ScoredResult<S> {
        ScoredResult {
            relation: index.relation(self.slot).clone(),
            score: self.score,
            matched_e1_alt: self.e1_alt as usize,
            matched_e2_alt: self.e2_alt.map(|a| a as usize),
            reversed: self.reversed,
        }
    }
}

/// Heap order: greater means ranked later, so a max-heap keeps the current
/// worst of the top k on top.
impl<S: Scalar> Ord for Candidate<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.score, self.id, other.score, other.id)
    }
}

impl<S: Scalar> PartialOrd for Candidate<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for Candidate<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Candidate<S> {}

struct TopK<S> {
    k: usize,
    heap: BinaryHeap<Candidate<S>>,
}

impl<S: Scalar> TopK<S> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(4096) + 1),
        }
    }

    fn offer(&mut self, c: Candidate<S>) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if c < *worst {
                *worst = c;
            }
        }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.k
    }

    fn worst_score(&self) -> Option<S> {
        self.heap.peek().map(|c| c.score)
    }

    fn into_results(self, index: &KbIndex<S>) -> Vec<ScoredResult<S>> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| c.into_result(index))
            .collect()
    }
}

/// Score every admissible relation and keep the best `k`. Reference
/// implementation for [`search_threshold`].
pub fn search_bruteforce<S: Scalar>(
    query: &RelationQuery,
    index: &KbIndex<S>,
    provider: &dyn EmbeddingProvider<S>,
) -> Result<SearchOutput<S>, IndexError> {
    let prepared = prepare(query, index, provider)?;
    let mut top = TopK::new(prepared.query.k);
    let mut scored = 0;
    for (slot, rel) in index.relations().iter().enumerate() {
        if prepared.admits(rel) {
            top.offer(prepared.score(index, slot as u32));
            scored += 1;
        }
    }
    let stats = SearchStats {
        entries_examined: index.vocabulary().len() * prepared.sides(),
        relations_scored: scored,
        vocabulary: index.vocabulary().len(),
        sides: prepared.sides(),
        early_terminated: false,
    };
    Ok(SearchOutput {
        results: top.into_results(index),
        stats,
    })
}

#[derive(Debug, Clone, Copy)]
struct StreamEntry<S> {
    sim: S,
    entity: u32,
}

/// Max-heap order: higher similarity first, then lower entity id.
impl<S: Scalar> Ord for StreamEntry<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .partial_cmp(&other.sim)
            .unwrap_or(Ordering::Equal)
            .then(other.entity.cmp(&self.entity))
    }
}

impl<S: Scalar> PartialOrd for StreamEntry<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for StreamEntry<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for StreamEntry<S> {}

/// Entities of one query side in descending similarity, materialized lazily.
struct EntityStream<S> {
    heap: BinaryHeap<StreamEntry<S>>,
    /// Argument positions joined when an entity is popped.
    positions: [Option<ArgPosition>; 2],
}

impl<S: Scalar> EntityStream<S> {
    fn new(sims: &[SideSim<S>], positions: [Option<ArgPosition>; 2]) -> Self {
        let entries: Vec<StreamEntry<S>> = sims
            .iter()
            .enumerate()
            .map(|(e, s)| StreamEntry {
                sim: s.sim,
                entity: e as u32,
            })
            .collect();
        Self {
            heap: BinaryHeap::from(entries),
            positions,
        }
    }

    fn frontier(&self) -> Option<S> {
        self.heap.peek().map(|e| e.sim)
    }

    fn joins(&self, position: ArgPosition) -> bool {
        self.positions.contains(&Some(position))
    }
}

/// Threshold-algorithm retrieval; same output as [`search_bruteforce`].
///
/// Each query side yields a stream of entities by descending similarity.
/// Streams are consumed round-robin; every relation reached through a
/// posting is scored at once by random access. Any relation not yet reached
/// has both of its side similarities bounded by the stream frontiers, so the
/// search stops once the k-th best score strictly exceeds the smallest
/// frontier. Strictness keeps relation-id tie-breaking identical to the
/// exhaustive scan.
pub fn search_threshold<S: Scalar>(
    query: &RelationQuery,
    index: &KbIndex<S>,
    provider: &dyn EmbeddingProvider<S>,
) -> Result<SearchOutput<S>, IndexError> {
    let prepared = prepare(query, index, provider)?;
    let symmetric = prepared.query.symmetric;
    let other = |p: ArgPosition| symmetric.then_some(p);

    let mut streams = vec![EntityStream::new(
        &prepared.first,
        [Some(ArgPosition::First), other(ArgPosition::Second)],
    )];
    if let Some(second) = &prepared.second {
        streams.push(EntityStream::new(
            second,
            [Some(ArgPosition::Second), other(ArgPosition::First)],
        ));
    }

    let total = index.relations().len();
    let mut seen = vec![false; total];
    let mut seen_count = 0;
    let mut top = TopK::new(prepared.query.k);
    let mut stats = SearchStats {
        vocabulary: index.vocabulary().len(),
        sides: streams.len(),
        ..Default::default()
    };

    let mut turn = 0;
    loop {
        let stream = &mut streams[turn % stats.sides];
        turn += 1;
        let Some(entry) = stream.heap.pop() else {
            // An exhausted stream has reached every relation.
            break;
        };
        stats.entries_examined += 1;
        for posting in index.postings(entry.entity) {
            if !stream.joins(posting.position) {
                continue;
            }
            let slot = posting.relation as usize;
            if seen[slot] {
                continue;
            }
            seen[slot] = true;
            seen_count += 1;
            if prepared.admits(&index.relations()[slot]) {
                top.offer(prepared.score(index, posting.relation));
                stats.relations_scored += 1;
            }
        }
        if seen_count == total {
            break;
        }
        if top.full() {
            let bound = streams
                .iter()
                .map(EntityStream::frontier)
                .try_fold(None::<S>, |acc, f| {
                    f.map(|f| Some(acc.map_or(f, |a: S| if f < a { f } else { a })))
                });
            match (bound, top.worst_score()) {
                (Some(Some(bound)), Some(worst)) if worst > bound => break,
                (None, _) => break,
                _ => {}
            }
        }
    }
    stats.early_terminated = streams.iter().all(|s| !s.heap.is_empty()) && seen_count < total;
    Ok(SearchOutput {
        results: top.into_results(index),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FallbackEmbedder;
    use crate::index::tests::rel;
    use crate::index::{build_index, BuildOptions};
    use crate::schema::RelationClass::{Direct, Indirect};

    fn fixture() -> KbIndex<f64> {
        let rels = vec![
            rel("warmer climates", "coronavirus", Indirect, 0),
            rel("microscope", "coronavirus", Indirect, 1),
            rel("coronavirus", "warm climate", Indirect, 2),
            rel("deep learning", "drug discovery", Direct, 3),
            rel("reinforcement learning", "drug design", Direct, 4),
        ];
        build_index(rels, &FallbackEmbedder::new(64), &BuildOptions::default()).unwrap()
    }

    fn ids(out: &SearchOutput<f64>) -> Vec<RelationId> {
        out.results.iter().map(|r| r.relation.relation_id).collect()
    }

    #[test]
    fn score_relation_is_min() {
        assert_eq!(score_relation(0.9, Some(0.2)), 0.2);
        assert_eq!(score_relation(0.7, Some(0.7)), 0.7);
        assert_eq!(score_relation(0.4, None), 0.4);
    }

    #[test]
    fn topk_exact_match_first() {
        let idx = fixture();
        let q: EmbeddingVector<f64> = crate::embed::fallback_embed("microscope", 64).unwrap();
        let top = topk_entities(&q, &idx, 3).unwrap();
        assert_eq!(idx.vocabulary().surface(top[0].0), "microscope");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        let all = topk_entities(&q, &idx, 1000).unwrap();
        assert_eq!(all.len(), idx.vocabulary().len());
        let bad: EmbeddingVector<f64> = crate::embed::fallback_embed("x", 8).unwrap();
        assert!(topk_entities(&bad, &idx, 1).is_err());
    }

    #[test]
    fn class_filter_and_ordering() {
        let idx = fixture();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["warm climate"])
            .with_e2(["coronavirus"])
            .with_class(Some(Indirect));
        let out = search_bruteforce(&q, &idx, &p).unwrap();
        assert_eq!(out.results.len(), 3);
        assert!(out.results.iter().all(|r| r.relation.class == Indirect));
        assert_eq!(out.results[0].relation.arg1.normalized, "warmer climate");
        assert!(out.results.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(ids(&out), ids(&search_threshold(&q, &idx, &p).unwrap()));
    }

    #[test]
    fn symmetric_finds_reversed_tuple() {
        let rels = vec![rel("coronavirus", "warm climate", Indirect, 0)];
        let idx: KbIndex<f64> =
            build_index(rels, &FallbackEmbedder::new(64), &BuildOptions::default()).unwrap();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["warm climate"]).with_e2(["coronavirus"]);
        let fwd = search_bruteforce(&q, &idx, &p).unwrap();
        let sym = search_bruteforce(&q.clone().symmetric(true), &idx, &p).unwrap();
        assert!((sym.results[0].score - 1.0).abs() < 1e-12);
        assert!(sym.results[0].reversed);
        assert!(fwd.results[0].score < sym.results[0].score);
        let ta = search_threshold(&q.symmetric(true), &idx, &p).unwrap();
        assert_eq!(ta.results, sym.results);
    }

    #[test]
    fn exact_tuple_terminates_early() {
        let idx = fixture();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["microscope"])
            .with_e2(["coronavirus"])
            .with_k(1);
        let out = search_threshold(&q, &idx, &p).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].relation.arg1.normalized, "microscope");
        assert!((out.results[0].score - 1.0).abs() < 1e-12);
        assert!(out.stats.early_terminated);
        assert!(out.stats.entries_examined < 2 * idx.vocabulary().len());
    }

    #[test]
    fn open_ended_query_uses_one_stream() {
        let idx = fixture();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["reinforcement learning"]).with_class(Some(Direct));
        let out = search_threshold(&q, &idx, &p).unwrap();
        assert_eq!(out.stats.sides, 1);
        assert_eq!(out.results[0].relation.arg1.normalized, "reinforcement learning");
        assert_eq!(out.results[0].matched_e2_alt, None);
        assert_eq!(out.results, search_bruteforce(&q, &idx, &p).unwrap().results);
    }

    #[test]
    fn alternatives_take_the_best_match() {
        let idx = fixture();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["remdesivir", "microscope"]).with_e2(["sars cov 2", "coronavirus"]);
        let out = search_threshold(&q, &idx, &p).unwrap();
        let top = &out.results[0];
        assert_eq!(top.relation.arg1.normalized, "microscope");
        assert_eq!(top.matched_e1_alt, 1);
        assert_eq!(top.matched_e2_alt, Some(1));
    }

    #[test]
    fn min_confidence_filters() {
        let idx = fixture();
        let p = FallbackEmbedder::new(64);
        let q = RelationQuery::new(["x"]).with_min_confidence(0.99).with_k(50);
        assert!(search_threshold(&q, &idx, &p).unwrap().results.is_empty());
        assert!(search_bruteforce(&q, &idx, &p).unwrap().results.is_empty());
    }

    #[test]
    fn provider_must_match_index() {
        let idx = fixture();
        let q = RelationQuery::new(["x"]);
        assert!(matches!(
            search_threshold(&q, &idx, &FallbackEmbedder::new(32)),
            Err(IndexError::ProviderMismatch { .. })
        ));
    }
}
