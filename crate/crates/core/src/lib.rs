//! Knowledge base completion with ConvKB and its TransE baseline.
//!
//! The crate covers the whole pipeline: reading WN18RR-style triple files
//! ([`kb`]), the two scoring functions ([`model`]), negative sampling, hand
//! derived gradients and optimizers ([`train`]), the filtered ranking protocol
//! ([`eval`]), and a bit-exact checkpoint format ([`checkpoint`]). The
//! `convkb` binary wraps all of it ([`cli`]).

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod kb;
pub mod model;
pub mod synthetic;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, RankingReport, Setting};
pub use kb::{bernoulli_stats, build_kb, load_dir, parse_triples, KnowledgeBase, RelationStats, Side, Split, Triple};
pub use model::{
    score_convkb, score_transe, Activation, ConvKbParams, EmbeddingStore, FilterInit, Model, ModelKind, Norm, Scorer,
};
pub use train::{TrainConfig, Trainer};

/// Deterministic generator for `(seed, stream)`. Every random draw in the
/// crate goes through one of these.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
