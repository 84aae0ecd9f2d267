//! Triple files, vocabularies, and the knowledge base they assemble into.
//!
//! Datasets use the WN18RR / FB15k-237 layout: a directory holding `train.txt`,
//! `valid.txt` and `test.txt`, one `head<TAB>relation<TAB>tail` triple per line.
//! Labels are kept verbatim. Entity and relation ids are dense and assigned in
//! first-seen order over train, then valid, then test.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// A fact `(head, relation, tail)` over dense vocabulary ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }

    /// Returns this triple with the entity on `side` replaced by `entity`.
    pub fn with_entity(self, side: Side, entity: usize) -> Self {
        match side {
            Side::Head => Triple { head: entity, ..self },
            Side::Tail => Triple { tail: entity, ..self },
        }
    }

    pub fn entity(&self, side: Side) -> usize {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Which entity slot of a triple is being replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Head => Side::Tail,
            Side::Tail => Side::Head,
        }
    }
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

/// An ordered label vocabulary with dense 0-based ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for label in labels {
            let label = label.into();
            if vocab.get(&label).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary label {label:?}")));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    /// Returns the id for `label`, appending it if unseen.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// FNV-1a hash over the labels in id order; used to detect vocabularies
    /// that agree in size but not in ordering.
    pub fn order_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash = OFFSET;
        for label in &self.labels {
            for &byte in label.as_bytes().iter().chain(std::iter::once(&0xffu8)) {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(PRIME);
            }
        }
        hash
    }
}

/// Entity and relation vocabularies, grown together while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub entities: Vocab,
    pub relations: Vocab,
}

/// Parses a triple file, interning unseen labels into `vocab`.
///
/// Blank lines are skipped. Any other line must have exactly three
/// TAB-separated fields.
pub fn parse_triples(path: impl AsRef<Path>, vocab: &mut Vocabularies) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples_str(&text, vocab).map_err(|(line, message)| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    })
}

fn parse_triples_str(text: &str, vocab: &mut Vocabularies) -> std::result::Result<Vec<Triple>, (usize, String)> {
    let mut triples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err((
                lineno + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err((lineno + 1, "empty field".to_owned()));
        }
        // Interning order within a line is head, relation, tail.
        let head = vocab.entities.intern(fields[0]);
        let relation = vocab.relations.intern(fields[1]);
        let tail = vocab.entities.intern(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

/// Writes `triples` as TSV using the labels from `vocab`.
pub fn write_triples(path: impl AsRef<Path>, triples: &[Triple], vocab: &Vocabularies) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let label = |v: &Vocab, id: usize| {
        v.label(id)
            .map(str::to_owned)
            .ok_or_else(|| Error::Config(format!("id {id} outside vocabulary")))
    };
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            label(&vocab.entities, t.head)?,
            label(&vocab.relations, t.relation)?,
            label(&vocab.entities, t.tail)?
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Entity/relation vocabularies plus the three splits and the global filter index.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter_index: HashSet<Triple>,
    train_index: HashSet<Triple>,
    in_train: Vec<bool>,
}

impl KnowledgeBase {
    /// Assembles a knowledge base from already-interned splits.
    pub fn from_splits(vocab: Vocabularies, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Result<Self> {
        let n_ent = vocab.entities.len();
        let n_rel = vocab.relations.len();
        let mut filter_index = HashSet::with_capacity(train.len() + valid.len() + test.len());
        let mut train_index = HashSet::new();
        for (split, triples) in [(Split::Train, &train), (Split::Valid, &valid), (Split::Test, &test)] {
            let mut seen = HashSet::with_capacity(triples.len());
            for &t in triples.iter() {
                if t.head >= n_ent || t.tail >= n_ent || t.relation >= n_rel {
                    return Err(Error::Config(format!(
                        "triple {t} in {} split is outside the vocabulary",
                        split.name()
                    )));
                }
                if !seen.insert(t) {
                    let label = |v: &Vocab, id| v.label(id).unwrap_or_default().to_owned();
                    return Err(Error::DuplicateTriple {
                        split: split.name().to_owned(),
                        head: label(&vocab.entities, t.head),
                        relation: label(&vocab.relations, t.relation),
                        tail: label(&vocab.entities, t.tail),
                    });
                }
                filter_index.insert(t);
            }
            if split == Split::Train {
                train_index = seen;
            }
        }
        let mut in_train = vec![false; n_ent];
        for t in &train {
            in_train[t.head] = true;
            in_train[t.tail] = true;
        }
        Ok(KnowledgeBase {
            entities: vocab.entities,
            relations: vocab.relations,
            train,
            valid,
            test,
            filter_index,
            train_index,
            in_train,
        })
    }

    /// Builds a knowledge base from labelled triples, interning labels in
    /// train → valid → test order.
    pub fn from_labeled<S: AsRef<str>>(train: &[(S, S, S)], valid: &[(S, S, S)], test: &[(S, S, S)]) -> Result<Self> {
        let mut vocab = Vocabularies::default();
        let mut intern = |split: &[(S, S, S)]| -> Vec<Triple> {
            split
                .iter()
                .map(|(h, r, t)| {
                    let head = vocab.entities.intern(h.as_ref());
                    let relation = vocab.relations.intern(r.as_ref());
                    let tail = vocab.entities.intern(t.as_ref());
                    Triple::new(head, relation, tail)
                })
                .collect()
        };
        let train = intern(train);
        let valid = intern(valid);
        let test = intern(test);
        KnowledgeBase::from_splits(vocab, train, valid, test)
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// True when `t` appears in any split.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.filter_index.contains(t)
    }

    pub fn in_train(&self, t: &Triple) -> bool {
        self.train_index.contains(t)
    }

    /// True when the entity occurs in at least one training triple.
    pub fn entity_in_train(&self, entity: usize) -> bool {
        self.in_train.get(entity).copied().unwrap_or(false)
    }

    pub fn filter_index_len(&self) -> usize {
        self.filter_index.len()
    }

    pub fn vocabularies(&self) -> Vocabularies {
        Vocabularies {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
        }
    }

    /// Writes the three splits back out as `train.txt`, `valid.txt`, `test.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vocab = self.vocabularies();
        for split in Split::ALL {
            write_triples(dir.join(split.file_name()), self.split(split), &vocab)?;
        }
        Ok(())
    }
}

/// Reads and assembles the three splits.
pub fn build_kb(
    train_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<KnowledgeBase> {
    let mut vocab = Vocabularies::default();
    let train = parse_triples(train_path, &mut vocab)?;
    let valid = parse_triples(valid_path, &mut vocab)?;
    let test = parse_triples(test_path, &mut vocab)?;
    KnowledgeBase::from_splits(vocab, train, valid, test)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from a dataset directory.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let dir = dir.as_ref();
    build_kb(
        dir.join(Split::Train.file_name()),
        dir.join(Split::Valid.file_name()),
        dir.join(Split::Test.file_name()),
    )
}

/// Per-relation cardinality statistics from the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationStat {
    /// Mean number of tails per distinct head.
    pub tph: f64,
    /// Mean number of heads per distinct tail.
    pub hpt: f64,
    /// `tph / (tph + hpt)`.
    pub head_corrupt_prob: f64,
}

/// Bernoulli corruption statistics, indexed by relation id. Relations that
/// never occur in the training split have no entry and corrupt either side
/// with probability 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationStats {
    per_relation: Vec<Option<RelationStat>>,
}

impl RelationStats {
    pub fn get(&self, relation: usize) -> Option<&RelationStat> {
        self.per_relation.get(relation).and_then(Option::as_ref)
    }

    pub fn head_corrupt_prob(&self, relation: usize) -> f64 {
        self.get(relation).map_or(0.5, |s| s.head_corrupt_prob)
    }

    pub fn len(&self) -> usize {
        self.per_relation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_relation.is_empty()
    }
}

/// Computes tails-per-head and heads-per-tail for every relation in train.
///
/// `tph(r) = |triples with r| / |distinct heads under r|`, `hpt` symmetric.
pub fn bernoulli_stats(kb: &KnowledgeBase) -> Result<RelationStats> {
    if kb.train.is_empty() {
        return Err(Error::Config("training split is empty".to_owned()));
    }
    let n_rel = kb.num_relations();
    let mut counts = vec![0usize; n_rel];
    let mut heads: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_rel];
    let mut tails: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_rel];
    for t in &kb.train {
        counts[t.relation] += 1;
        heads[t.relation].insert(t.head);
        tails[t.relation].insert(t.tail);
    }
    let per_relation = (0..n_rel)
        .map(|r| {
            if counts[r] == 0 {
                warn!(
                    "relation {:?} does not occur in train; corrupting head with probability 0.5",
                    kb.relations.label(r).unwrap_or_default()
                );
                return None;
            }
            let n = counts[r] as f64;
            let tph = n / heads[r].len() as f64;
            let hpt = n / tails[r].len() as f64;
            Some(RelationStat {
                tph,
                hpt,
                head_corrupt_prob: tph / (tph + hpt),
            })
        })
        .collect();
    Ok(RelationStats { per_relation })
}
