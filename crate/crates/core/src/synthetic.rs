//! Small rule-generated knowledge bases for tests and demos.

use rand::seq::SliceRandom;

use crate::kb::{KnowledgeBase, Triple, Vocabularies};
use crate::seeded_rng;

/// Relation name and the offsets it connects on the entity line.
const LINE_RULES: [(&str, [i64; 2]); 4] = [("next", [1, 2]), ("skip", [3, 4]), ("jump", [5, 6]), ("prev", [-1, -2])];

pub const LINE_ENTITIES: usize = 60;
pub const LINE_VALID: usize = 20;
pub const LINE_TEST: usize = 50;

/// Entities `e00..e59` on a line; relation `next` links `i` to `i+1` and
/// `i+2`, `skip` to `i+3` and `i+4`, `jump` to `i+5` and `i+6`, and `prev` to
/// `i-1` and `i-2`, whenever the target exists. The 456 resulting triples are
/// shuffled with `seed` and split 386 / 20 / 50.
pub fn line_kb(seed: u64) -> KnowledgeBase {
    let mut all = Vec::new();
    for (r, (_, offsets)) in LINE_RULES.iter().enumerate() {
        for i in 0..LINE_ENTITIES as i64 {
            for off in offsets {
                let j = i + off;
                if (0..LINE_ENTITIES as i64).contains(&j) {
                    all.push((i as usize, r, j as usize));
                }
            }
        }
    }
    all.shuffle(&mut seeded_rng(seed, 0));
    let n = all.len();
    let (rest, test) = all.split_at(n - LINE_TEST);
    let (train, valid) = rest.split_at(rest.len() - LINE_VALID);

    let mut vocab = Vocabularies::default();
    let mut intern = |split: &[(usize, usize, usize)]| -> Vec<Triple> {
        split
            .iter()
            .map(|&(h, r, t)| {
                let head = vocab.entities.intern(&format!("e{h:02}"));
                let relation = vocab.relations.intern(LINE_RULES[r].0);
                let tail = vocab.entities.intern(&format!("e{t:02}"));
                Triple::new(head, relation, tail)
            })
            .collect()
    };
    let train = intern(train);
    let valid = intern(valid);
    let test = intern(test);
    KnowledgeBase::from_splits(vocab, train, valid, test).expect("generated triples are distinct")
}

/// Three relations over a ring of `n` entities: relation `j` maps `i` to
/// `i + j + 1 (mod n)`. The first `n_train` of the `3n` triples (ordered by
/// relation, then head) go to train and the rest to test.
pub fn chain_kb(n: usize, n_train: usize) -> KnowledgeBase {
    let mut labeled = Vec::with_capacity(3 * n);
    for j in 0..3 {
        for i in 0..n {
            labeled.push((format!("n{i}"), format!("r{j}"), format!("n{}", (i + j + 1) % n)));
        }
    }
    let n_train = n_train.min(labeled.len());
    let (train, test) = labeled.split_at(n_train);
    KnowledgeBase::from_labeled(train, &[], test).expect("generated triples are distinct")
}
