//! Bernoulli negative sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, RelationStats, Side, Triple};

/// Maximum number of redraws before giving up on a corruption.
pub const MAX_RESAMPLE: usize = 1000;

/// A corrupted triple together with the side that was replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub triple: Triple,
    pub side: Side,
}

/// Corrupts `t`, choosing the head with the relation's Bernoulli probability and
/// redrawing the replacement entity until the result is not a training triple.
pub fn sample_corrupted<R: Rng + ?Sized>(
    t: Triple,
    kb: &KnowledgeBase,
    stats: &RelationStats,
    rng: &mut R,
) -> Result<Triple> {
    sample_corruption(t, kb, stats, rng).map(|c| c.triple)
}

/// Like [`sample_corrupted`] but also reports which side was replaced.
pub fn sample_corruption<R: Rng + ?Sized>(
    t: Triple,
    kb: &KnowledgeBase,
    stats: &RelationStats,
    rng: &mut R,
) -> Result<Corruption> {
    let n = kb.num_entities();
    if n < 2 {
        return Err(Error::Sampling(format!(
            "cannot corrupt {t}: knowledge base has {n} entities"
        )));
    }
    let side = if rng.random::<f64>() < stats.head_corrupt_prob(t.relation) {
        Side::Head
    } else {
        Side::Tail
    };
    for _ in 0..MAX_RESAMPLE {
        let candidate = t.with_entity(side, rng.random_range(0..n));
        if !kb.in_train(&candidate) {
            return Ok(Corruption {
                triple: candidate,
                side,
            });
        }
    }
    Err(Error::Sampling(format!(
        "no corruption of {t} outside the training split after {MAX_RESAMPLE} draws"
    )))
}
