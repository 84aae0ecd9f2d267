//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "CONVKBCK"
//! version          u32
//! model kind       u8       0 = TransE, 1 = ConvKB
//! k, tau           u64, u64 (tau = 0 for TransE)
//! n_ent, n_rel     u64, u64
//! ent_hash         u64      order hash of the entity vocabulary
//! rel_hash         u64      order hash of the relation vocabulary
//! config           norm u8, gamma f64, lambda f64, lr f64, batch u64,
//!                  epochs u64, neg_ratio u64, seed u64, filter_init u8,
//!                  activation u8, optimizer u8, normalize u8,
//!                  train_unseen u8, epochs_completed u64
//! vocabulary       n_ent then n_rel strings, each u64 length + UTF-8 bytes
//! embeddings       entity array, relation array (u64 length + f64s)
//! ConvKB only      activation u8, filters, biases, weight arrays
//! optimizer        u8 flag; if 1: step u64, beta1, beta2, eps f64, then
//!                  m/v arrays for entities, relations, filters, biases, weight
//! ```
//!
//! Encoding is canonical, so load → save reproduces the input byte for byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Vocab, Vocabularies};
use crate::model::{Activation, ConvKbParams, EmbeddingStore, FilterInit, Model, ModelKind, Norm};
use crate::train::{AdamState, Optimizer, TrainConfig};

pub const MAGIC: [u8; 8] = *b"CONVKBCK";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to evaluate, resume, or warm-start from a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabularies,
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub epochs_completed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was trained on `kb`'s vocabularies, in the same order.
    pub fn check_vocab(&self, kb: &KnowledgeBase) -> Result<()> {
        for (what, ours, theirs) in [
            ("entity", &self.vocab.entities, &kb.entities),
            ("relation", &self.vocab.relations, &kb.relations),
        ] {
            if ours.len() != theirs.len() {
                return Err(Error::VocabMismatch(format!(
                    "checkpoint has {} {what} labels, dataset has {}",
                    ours.len(),
                    theirs.len()
                )));
            }
            if ours.order_hash() != theirs.order_hash() {
                return Err(Error::VocabMismatch(format!(
                    "{what} vocabulary order differs from the dataset"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let emb = self.model.emb();
        let kind = self.model.kind();
        if kind != self.config.model {
            return Err(Error::Checkpoint("model kind disagrees with its configuration".into()));
        }
        if self.vocab.entities.len() != emb.num_entities() || self.vocab.relations.len() != emb.num_relations() {
            return Err(Error::Checkpoint(
                "vocabulary size disagrees with the embedding tables".into(),
            ));
        }
        let tau = self.model.conv().map_or(0, ConvKbParams::tau);

        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(kind_code(kind));
        w.u64(emb.k() as u64);
        w.u64(tau as u64);
        w.u64(emb.num_entities() as u64);
        w.u64(emb.num_relations() as u64);
        w.u64(self.vocab.entities.order_hash());
        w.u64(self.vocab.relations.order_hash());

        let c = &self.config;
        w.u8(c.norm.p() as u8);
        w.f64(c.gamma);
        w.f64(c.lambda);
        w.f64(c.lr);
        w.u64(c.batch_size as u64);
        w.u64(c.epochs as u64);
        w.u64(c.neg_ratio as u64);
        w.u64(c.seed);
        w.u8(filter_init_code(c.filter_init));
        w.u8(activation_code(c.activation));
        w.u8(optimizer_code(c.optimizer));
        w.u8(c.normalize_entities as u8);
        w.u8(c.train_unseen_entities as u8);
        w.u64(self.epochs_completed);

        for label in self.vocab.entities.labels().iter().chain(self.vocab.relations.labels()) {
            w.string(label);
        }
        w.f64s(emb.entity_data());
        w.f64s(emb.relation_data());

        if let Some(p) = self.model.conv() {
            w.u8(activation_code(p.activation));
            w.f64s(p.filters.as_flattened());
            w.f64s(&p.biases);
            w.f64s(&p.weight);
        }

        match &self.optimizer {
            None => w.u8(0),
            Some(s) => {
                if !s.matches(&self.model) {
                    return Err(Error::Checkpoint("optimizer state does not match the model".into()));
                }
                w.u8(1);
                w.u64(s.step);
                w.f64(s.beta1);
                w.f64(s.beta2);
                w.f64(s.epsilon);
                for block in [
                    &s.m_entities,
                    &s.v_entities,
                    &s.m_relations,
                    &s.v_relations,
                    &s.m_filters,
                    &s.v_filters,
                    &s.m_biases,
                    &s.v_biases,
                    &s.m_weight,
                    &s.v_weight,
                ] {
                    w.f64s(block);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let kind = kind_from(r.u8()?)?;
        let k = r.usize()?;
        let tau = r.usize()?;
        let n_ent = r.usize()?;
        let n_rel = r.usize()?;
        let ent_hash = r.u64()?;
        let rel_hash = r.u64()?;
        if k == 0 {
            return Err(Error::Checkpoint("k = 0".into()));
        }
        if (kind == ModelKind::ConvKb) != (tau > 0) {
            return Err(Error::Checkpoint(format!("tau = {tau} is invalid for {}", kind.name())));
        }

        let norm = Norm::from_p(u32::from(r.u8()?)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let config = TrainConfig {
            model: kind,
            k,
            tau: if tau == 0 { 1 } else { tau },
            norm,
            gamma: r.f64()?,
            lambda: r.f64()?,
            lr: r.f64()?,
            batch_size: r.usize()?,
            epochs: r.usize()?,
            neg_ratio: r.usize()?,
            seed: r.u64()?,
            filter_init: filter_init_from(r.u8()?)?,
            activation: activation_from(r.u8()?)?,
            optimizer: optimizer_from(r.u8()?)?,
            normalize_entities: r.flag()?,
            train_unseen_entities: r.flag()?,
        };
        let epochs_completed = r.u64()?;

        let mut read_vocab = |n: usize| -> Result<Vocab> {
            let labels = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            Vocab::from_labels(labels).map_err(|e| Error::Checkpoint(e.to_string()))
        };
        let entities = read_vocab(n_ent)?;
        let relations = read_vocab(n_rel)?;
        if entities.order_hash() != ent_hash || relations.order_hash() != rel_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }

        let ent_data = r.f64s(n_ent * k)?;
        let rel_data = r.f64s(n_rel * k)?;
        let emb = EmbeddingStore::from_raw(k, ent_data, rel_data).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let model = match kind {
            ModelKind::TransE => Model::TransE { emb, norm },
            ModelKind::ConvKb => {
                let activation = activation_from(r.u8()?)?;
                let flat = r.f64s(tau * 3)?;
                let filters = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                let biases = r.f64s(tau)?;
                let weight = r.f64s(tau * k)?;
                let params = ConvKbParams {
                    filters,
                    biases,
                    weight,
                    activation,
                };
                Model::convkb(emb, params).map_err(|e| Error::Checkpoint(e.to_string()))?
            }
        };

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let mut s = AdamState::new(&model);
                s.step = r.u64()?;
                s.beta1 = r.f64()?;
                s.beta2 = r.f64()?;
                s.epsilon = r.f64()?;
                for block in [
                    &mut s.m_entities,
                    &mut s.v_entities,
                    &mut s.m_relations,
                    &mut s.v_relations,
                    &mut s.m_filters,
                    &mut s.v_filters,
                    &mut s.m_biases,
                    &mut s.v_biases,
                    &mut s.m_weight,
                    &mut s.v_weight,
                ] {
                    let expected = block.len();
                    *block = r.f64s(expected)?;
                }
                Some(s)
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };

        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            vocab: Vocabularies { entities, relations },
            model,
            optimizer,
            epochs_completed,
        })
    }
}

fn kind_code(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::TransE => 0,
        ModelKind::ConvKb => 1,
    }
}

fn kind_from(code: u8) -> Result<ModelKind> {
    match code {
        0 => Ok(ModelKind::TransE),
        1 => Ok(ModelKind::ConvKb),
        other => Err(Error::Checkpoint(format!("unknown model kind {other}"))),
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Abs => 1,
        Activation::Square => 2,
        Activation::Identity => 3,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Abs),
        2 => Ok(Activation::Square),
        3 => Ok(Activation::Identity),
        other => Err(Error::Checkpoint(format!("unknown activation {other}"))),
    }
}

fn filter_init_code(f: FilterInit) -> u8 {
    match f {
        FilterInit::TruncatedNormal => 0,
        FilterInit::Fixed => 1,
    }
}

fn filter_init_from(code: u8) -> Result<FilterInit> {
    match code {
        0 => Ok(FilterInit::TruncatedNormal),
        1 => Ok(FilterInit::Fixed),
        other => Err(Error::Checkpoint(format!("unknown filter init {other}"))),
    }
}

fn optimizer_code(o: Optimizer) -> u8 {
    match o {
        Optimizer::Sgd => 0,
        Optimizer::Adam => 1,
    }
}

fn optimizer_from(code: u8) -> Result<Optimizer> {
    match code {
        0 => Ok(Optimizer::Sgd),
        1 => Ok(Optimizer::Adam),
        other => Err(Error::Checkpoint(format!("unknown optimizer {other}"))),
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
    fn f64s(&mut self, values: &[f64]) {
        self.u64(values.len() as u64);
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated checkpoint at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Checkpoint(format!("bad boolean {other}"))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("count overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Checkpoint("label is not UTF-8".into()))
    }
    fn f64s(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n != expected {
            return Err(Error::Checkpoint(format!("array of length {n}, expected {expected}")));
        }
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("array too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
