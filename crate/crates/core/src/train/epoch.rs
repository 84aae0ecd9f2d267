use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{bernoulli_stats, KnowledgeBase, RelationStats, Triple};
use crate::model::{
    init_convkb_params, init_transe_embeddings, Activation, EmbeddingStore, FilterInit, Model, ModelKind, Norm,
};
use crate::seeded_rng;
use crate::train::grad::{grad_convkb, grad_transe, GradientSet, LabeledTriple};
use crate::train::optim::{adam_step, normalize_entities, sgd_step, AdamState};
use crate::train::sampling::sample_corrupted;

/// Epoch `e` draws from stream `EPOCH_STREAM_BASE + e` of the base seed.
const EPOCH_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Embedding dimension.
    pub k: usize,
    /// Number of filters (ConvKB only).
    pub tau: usize,
    /// TransE distance norm.
    pub norm: Norm,
    /// TransE margin.
    pub gamma: f64,
    /// L2 coefficient on the ConvKB weight vector.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Corrupted triples drawn per valid triple.
    pub neg_ratio: usize,
    pub seed: u64,
    pub filter_init: FilterInit,
    pub activation: Activation,
    pub optimizer: Optimizer,
    /// Rescale entity rows to unit norm before each batch.
    pub normalize_entities: bool,
    /// When false, entities absent from the training split keep their
    /// initial embeddings even if they are drawn as corruptions.
    pub train_unseen_entities: bool,
}

impl TrainConfig {
    /// TransE defaults: L1, SGD, 3000 epochs, entity normalization on.
    pub fn transe() -> Self {
        TrainConfig {
            model: ModelKind::TransE,
            k: 50,
            tau: 1,
            norm: Norm::L1,
            gamma: 1.0,
            lambda: 0.0,
            lr: 5e-4,
            batch_size: 256,
            epochs: 3000,
            neg_ratio: 1,
            seed: 7,
            filter_init: FilterInit::TruncatedNormal,
            activation: Activation::Relu,
            optimizer: Optimizer::Sgd,
            normalize_entities: true,
            train_unseen_entities: false,
        }
    }

    /// ConvKB defaults: ReLU, Adam, λ = 0.001, 200 epochs.
    pub fn convkb() -> Self {
        TrainConfig {
            model: ModelKind::ConvKb,
            tau: 50,
            lambda: 0.001,
            lr: 1e-4,
            epochs: 200,
            optimizer: Optimizer::Adam,
            normalize_entities: false,
            ..TrainConfig::transe()
        }
    }

    pub fn for_model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::TransE => TrainConfig::transe(),
            ModelKind::ConvKb => TrainConfig::convkb(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.model == ModelKind::ConvKb && self.tau == 0 {
            return fail("tau must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.neg_ratio == 0 {
            return fail("neg-ratio must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.model == ModelKind::TransE && !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail(format!("margin must be positive, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Builds the initial model for `config` over `kb`.
///
/// `init_embeddings` replaces the random embedding initialization (e.g. with
/// trained TransE vectors); ConvKB filters and weights are always fresh.
pub fn init_model(config: &TrainConfig, kb: &KnowledgeBase, init_embeddings: Option<EmbeddingStore>) -> Result<Model> {
    config.validate()?;
    let emb = match init_embeddings {
        Some(emb) => {
            if emb.k() != config.k {
                return Err(Error::Config(format!(
                    "initial embeddings have k={} but the run uses k={}",
                    emb.k(),
                    config.k
                )));
            }
            if emb.num_entities() != kb.num_entities() || emb.num_relations() != kb.num_relations() {
                return Err(Error::VocabMismatch(format!(
                    "initial embeddings cover {} entities / {} relations, dataset has {} / {}",
                    emb.num_entities(),
                    emb.num_relations(),
                    kb.num_entities(),
                    kb.num_relations()
                )));
            }
            emb
        }
        None => init_transe_embeddings(config.seed, config.k, kb.num_entities(), kb.num_relations()),
    };
    Ok(match config.model {
        ModelKind::TransE => Model::TransE { emb, norm: config.norm },
        ModelKind::ConvKb => {
            let mut params = init_convkb_params(config.seed, config.k, config.tau, config.filter_init);
            params.activation = config.activation;
            Model::convkb(emb, params)?
        }
    })
}

/// Optimizer state carried across batches.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam(Box<AdamState>),
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, model: &Model) -> Self {
        match optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam(Box::new(AdamState::new(model))),
        }
    }

    pub fn apply(&mut self, grads: &GradientSet, model: &mut Model, lr: f64) {
        match self {
            OptimizerState::Sgd => sgd_step(model, grads, lr),
            OptimizerState::Adam(state) => adam_step(state, grads, model, lr),
        }
    }

    pub fn adam(&self) -> Option<&AdamState> {
        match self {
            OptimizerState::Adam(state) => Some(state),
            OptimizerState::Sgd => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Loss per labelled triple (ConvKB) or per pair (TransE).
    pub mean_loss: f64,
    pub elapsed: Duration,
}

/// Random stream for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    seeded_rng(seed, EPOCH_STREAM_BASE + epoch as u64)
}

/// One pass over the shuffled training split.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    kb: &KnowledgeBase,
    stats: &RelationStats,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<Triple> = kb.train.clone();
    order.shuffle(rng);

    let mut total = 0.0;
    let mut count = 0usize;
    for batch in order.chunks(config.batch_size) {
        if config.normalize_entities {
            normalize_entities(model.emb_mut());
        }
        let (loss, mut grads, n) = match model {
            Model::TransE { emb, norm } => {
                let mut pairs = Vec::with_capacity(batch.len() * config.neg_ratio);
                for &pos in batch {
                    for _ in 0..config.neg_ratio {
                        pairs.push((pos, sample_corrupted(pos, kb, stats, rng)?));
                    }
                }
                let (loss, grads) = grad_transe(&pairs, emb, *norm, config.gamma);
                (loss, grads, pairs.len())
            }
            Model::ConvKb { emb, params } => {
                let mut labeled = Vec::with_capacity(batch.len() * (1 + config.neg_ratio));
                for &pos in batch {
                    labeled.push(LabeledTriple::valid(pos));
                    for _ in 0..config.neg_ratio {
                        labeled.push(LabeledTriple::corrupted(sample_corrupted(pos, kb, stats, rng)?));
                    }
                }
                let (loss, grads) = grad_convkb(&labeled, params, emb, config.lambda)?;
                (loss, grads, labeled.len())
            }
        };
        if !config.train_unseen_entities {
            grads.entities.retain(|&e, _| kb.entity_in_train(e));
        }
        optimizer.apply(&grads, model, config.lr);
        total += loss;
        count += n;
    }
    if !model.emb().is_finite() {
        return Err(Error::Numerical("embeddings diverged to non-finite values".into()));
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Owns a model and its optimizer state for a multi-epoch run.
#[derive(Debug)]
pub struct Trainer<'a> {
    kb: &'a KnowledgeBase,
    stats: RelationStats,
    config: TrainConfig,
    model: Model,
    optimizer: OptimizerState,
    epochs_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(kb: &'a KnowledgeBase, config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        if model.kind() != config.model || model.emb().k() != config.k {
            return Err(Error::Config("model does not match the training configuration".into()));
        }
        let stats = bernoulli_stats(kb)?;
        let optimizer = OptimizerState::new(config.optimizer, &model);
        Ok(Trainer {
            kb,
            stats,
            config,
            model,
            optimizer,
            epochs_done: 0,
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let epoch = self.epochs_done;
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mean_loss = train_epoch(
            &mut self.model,
            &mut self.optimizer,
            self.kb,
            &self.stats,
            &self.config,
            &mut rng,
        )?;
        self.epochs_done += 1;
        Ok(EpochStats {
            epoch: epoch + 1,
            mean_loss,
            elapsed: start.elapsed(),
        })
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
        let mut history = Vec::with_capacity(self.config.epochs);
        while self.epochs_done < self.config.epochs {
            let stats = self.run_epoch()?;
            on_epoch(&stats);
            history.push(stats);
        }
        Ok(history)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn into_parts(self) -> (Model, OptimizerState) {
        (self.model, self.optimizer)
    }
}
