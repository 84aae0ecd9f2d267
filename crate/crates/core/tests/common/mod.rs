//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashSet;

use convkb::eval::Setting;
use convkb::kb::Vocabularies;
use convkb::{KnowledgeBase, Scorer, Side, Triple};
use rand::Rng;

/// Reference ranking: build the candidate list, drop filtered candidates,
/// sort by score with the valid triple placed after every equal score, and
/// read off its position.
pub fn brute_force_rank<S: Scorer>(scorer: &S, kb: &KnowledgeBase, t: Triple, side: Side, setting: Setting) -> usize {
    let known: HashSet<Triple> = kb.train.iter().chain(&kb.valid).chain(&kb.test).copied().collect();
    let mut scored: Vec<(f64, bool)> = (0..kb.num_entities())
        .map(|e| t.with_entity(side, e))
        .filter(|c| *c == t || setting == Setting::Raw || !known.contains(c))
        .map(|c| (scorer.score(c), c == t))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.iter().position(|&(_, is_valid)| is_valid).unwrap() + 1
}

/// Random KB with up to `max_entities` entities and `max_relations` relations
/// and up to `max_triples` distinct triples spread over the three splits.
pub fn random_kb<R: Rng>(rng: &mut R, max_entities: usize, max_relations: usize, max_triples: usize) -> KnowledgeBase {
    let n_ent = rng.random_range(2..=max_entities);
    let n_rel = rng.random_range(1..=max_relations);
    let target = rng.random_range(3..=max_triples).min(n_ent * n_ent * n_rel);
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    while triples.len() < target {
        let t = Triple::new(
            rng.random_range(0..n_ent),
            rng.random_range(0..n_rel),
            rng.random_range(0..n_ent),
        );
        if seen.insert(t) {
            triples.push(t);
        }
    }
    let n_test = (triples.len() / 5).max(1);
    let n_valid = triples.len() / 10;
    let test = triples.split_off(triples.len() - n_test);
    let valid = triples.split_off(triples.len() - n_valid);
    let mut vocab = Vocabularies::default();
    for e in 0..n_ent {
        vocab.entities.intern(&format!("ent{e}"));
    }
    for r in 0..n_rel {
        vocab.relations.intern(&format!("rel{r}"));
    }
    KnowledgeBase::from_splits(vocab, triples, valid, test).unwrap()
}

/// Scores drawn from a small integer range so that ties are common.
pub fn tied_scores<R: Rng>(rng: &mut R, n_ent: usize, n_rel: usize, levels: u32) -> Vec<f64> {
    (0..n_ent * n_rel * n_ent)
        .map(|_| f64::from(rng.random_range(0..levels)))
        .collect()
}

pub fn table_scorer(table: &[f64], n_ent: usize, n_rel: usize) -> impl Fn(Triple) -> f64 + Sync + '_ {
    move |t: Triple| table[(t.head * n_rel + t.relation) * n_ent + t.tail]
}
