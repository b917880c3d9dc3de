//! Threshold retrieval against the exhaustive scan on random KBs.

use mechkb_core::embed::{EmbedError, EmbeddingProvider, EmbeddingVector, FallbackEmbedder};
use mechkb_core::hash::fnv1a64;
use mechkb_core::index::{build_index, search_bruteforce, search_threshold, BuildOptions, KbIndex};
use mechkb_core::normalize::NormalizationConfig;
use mechkb_core::schema::{
    EntitySurface, MechanismRelation, Provenance, RelationClass, RelationQuery,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vectors drawn from {-1, 0, 1}^d seeded by the text hash; coarse on
/// purpose so ties in similarity are common.
struct TernaryProvider {
    dim: usize,
}

impl EmbeddingProvider<f64> for TernaryProvider {
    fn name(&self) -> &str {
        "ternary"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(t.as_bytes()));
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1..=1) as f64).collect();
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

fn word(rng: &mut ChaCha8Rng) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "to", "vi", "ze", "an", "or", "el", "iu"];
    let n = rng.random_range(1..=3);
    (0..n).map(|_| SYL[rng.random_range(0..SYL.len())]).collect()
}

fn random_kb(seed: u64, relations: usize, vocab: usize) -> (Vec<String>, Vec<MechanismRelation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NormalizationConfig::default();
    let mut words: Vec<String> = Vec::new();
    while words.len() < vocab {
        let w = format!("{} {}", word(&mut rng), word(&mut rng));
        let w = mechkb_core::normalize::normalize_surface(&w, &cfg).unwrap();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    let rels = (0..relations)
        .map(|i| {
            let a = &words[rng.random_range(0..vocab)];
            let b = &words[rng.random_range(0..vocab)];
            let class = if rng.random_bool(0.5) {
                RelationClass::Direct
            } else {
                RelationClass::Indirect
            };
            MechanismRelation::new(
                EntitySurface::new(a, &cfg).unwrap(),
                EntitySurface::new(b, &cfg).unwrap(),
                class,
                rng.random_range(0.85..=1.0),
                Provenance {
                    doc_id: format!("doc{}", i % 7),
                    sentence: format!("sentence {i}"),
                    title: String::new(),
                    url: String::new(),
                    sentence_index: i as u32,
                },
            )
            .unwrap()
        })
        .collect();
    (words, rels)
}

fn random_query(rng: &mut ChaCha8Rng, words: &[String]) -> RelationQuery {
    let pick = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.6) {
            words[rng.random_range(0..words.len())].clone()
        } else {
            format!("{} {}", word(rng), word(rng))
        }
    };
    let e1: Vec<String> = (0..rng.random_range(1..=3)).map(|_| pick(rng)).collect();
    let e2: Vec<String> = if rng.random_bool(0.3) {
        Vec::new()
    } else {
        (0..rng.random_range(1..=3)).map(|_| pick(rng)).collect()
    };
    let class = match rng.random_range(0..3) {
        0 => None,
        1 => Some(RelationClass::Direct),
        _ => Some(RelationClass::Indirect),
    };
    RelationQuery::new(e1)
        .with_e2(e2)
        .with_class(class)
        .with_k(rng.random_range(1..=40))
        .symmetric(rng.random_bool(0.4))
        .with_min_confidence(if rng.random_bool(0.5) { 0.9 } else { 0.0 })
}

fn assert_same(kb: &KbIndex<f64>, provider: &dyn EmbeddingProvider<f64>, q: &RelationQuery) {
    let bf = search_bruteforce(q, kb, provider).unwrap();
    let ta = search_threshold(q, kb, provider).unwrap();
    let ids = |o: &mechkb_core::index::SearchOutput<f64>| {
        o.results
            .iter()
            .map(|r| r.relation.relation_id)
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&bf), ids(&ta), "query {q:?}");
    for (a, b) in bf.results.iter().zip(&ta.results) {
        assert!((a.score - b.score).abs() <= 1e-9);
        assert_eq!(a, b);
    }
    assert!(ta.stats.entries_examined <= bf.stats.entries_examined);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_equals_bruteforce(seed in any::<u64>(), n in 1usize..200, v in 2usize..80, ternary in any::<bool>()) {
        let (words, rels) = random_kb(seed, n, v);
        let provider: Box<dyn EmbeddingProvider<f64>> = if ternary {
            Box::new(TernaryProvider { dim: 8 })
        } else {
            Box::new(FallbackEmbedder::new(16))
        };
        let kb = build_index(rels, &provider, &BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..8 {
            assert_same(&kb, provider.as_ref(), &random_query(&mut rng, &words));
        }
    }

    #[test]
    fn results_respect_invariants(seed in any::<u64>()) {
        let (words, rels) = random_kb(seed, 150, 60);
        let p = FallbackEmbedder::new(32);
        let kb: KbIndex<f64> = build_index(rels, &p, &BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, &words);
        let out = search_threshold(&q, &kb, &p).unwrap();

        // class filter and confidence
        for r in &out.results {
            prop_assert!(q.class_filter.is_none_or(|c| c == r.relation.class));
            prop_assert!(r.relation.confidence >= q.min_confidence);
        }
        // sorted
        for w in out.results.windows(2) {
            prop_assert!(w[0].rank_cmp(&w[1]).is_lt());
        }
        // prefix property when k grows
        let bigger = search_threshold(&q.clone().with_k(q.k + 17), &kb, &p).unwrap();
        prop_assert_eq!(&bigger.results[..out.results.len()], &out.results[..]);

        // min-aggregation bound: no score exceeds the best single-entity similarity of a side
        let nq = q.normalized(&NormalizationConfig::default()).unwrap();
        let best_side = |alts: &[String]| {
            alts.iter()
                .map(|a| {
                    let v = p.embed_one(a).unwrap();
                    mechkb_core::index::topk_entities(&v, &kb, 1).unwrap()[0].1
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut bound = best_side(&nq.e1_alternatives);
        if !nq.e2_alternatives.is_empty() {
            bound = bound.min(best_side(&nq.e2_alternatives));
        }
        for r in &out.results {
            prop_assert!(r.score <= bound + 1e-12);
        }
    }

    #[test]
    fn symmetric_is_superset(seed in any::<u64>()) {
        let (words, rels) = random_kb(seed, 80, 30);
        let n = rels.len();
        let p = FallbackEmbedder::new(16);
        let kb: KbIndex<f64> = build_index(rels, &p, &BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, &words).with_k(n).symmetric(false);
        let asym = search_threshold(&q, &kb, &p).unwrap();
        let sym = search_threshold(&q.clone().symmetric(true), &kb, &p).unwrap();
        let sym_ids: std::collections::HashSet<_> =
            sym.results.iter().map(|r| r.relation.relation_id).collect();
        for r in &asym.results {
            prop_assert!(sym_ids.contains(&r.relation.relation_id));
        }
        // a relation's symmetric score is never lower than its one-way score
        for r in &asym.results {
            let s = sym.results.iter().find(|x| x.relation.relation_id == r.relation.relation_id).unwrap();
            prop_assert!(s.score >= r.score);
        }
    }
}

#[test]
fn bruteforce_k_larger_than_kb_returns_all_matching() {
    let (_, rels) = random_kb(7, 50, 20);
    let direct = rels
        .iter()
        .filter(|r| r.class == RelationClass::Direct && r.confidence >= 0.9)
        .count();
    let p = FallbackEmbedder::new(16);
    let kb: KbIndex<f32> = build_index(rels, &p, &BuildOptions::default()).unwrap();
    let q = RelationQuery::new(["kalo"])
        .with_e2(["mine"])
        .with_class(Some(RelationClass::Direct))
        .with_k(10_000);
    let out = search_bruteforce(&q, &kb, &p).unwrap();
    assert_eq!(out.results.len(), direct);
    let ta = search_threshold(&q, &kb, &p).unwrap();
    assert_eq!(ta.results, out.results);
}
