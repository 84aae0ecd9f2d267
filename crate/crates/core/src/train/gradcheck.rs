//! Central-difference verification of the analytic gradients.
//!
//! Each parameter component `θ` is compared against
//! `(L(θ + h) − L(θ − h)) / 2h`. The relative error is
//! `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`; the floor keeps components whose
//! true gradient is ~0 from turning round-off into huge ratios.
//!
//! Components whose perturbation moves a kink argument (a ReLU/|x|
//! pre-activation, a TransE hinge, or an L1 residual) to within `2h` of zero,
//! or across it, are skipped.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kb::Triple;
use crate::model::{pre_activation, Activation, ConvKbParams, EmbeddingStore, Model, ModelKind, Norm};
use crate::seeded_rng;
use crate::train::grad::{grad_convkb, grad_transe, loss_convkb, loss_transe, GradientSet, Label, LabeledTriple};

pub const REL_ERR_FLOOR: f64 = 1e-2;
pub const DEFAULT_STEP: f64 = 1e-6;
/// Tolerance for objectives with kinks (ReLU, |x|, L1, hinge).
pub const KINKED_TOLERANCE: f64 = 1e-4;
/// Tolerance for smooth objectives (square activation, L2 with active hinges).
pub const SMOOTH_TOLERANCE: f64 = 1e-6;

/// The data a gradient is taken over.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckSample {
    /// ConvKB softplus objective.
    Labeled { batch: Vec<LabeledTriple>, lambda: f64 },
    /// TransE margin objective over (valid, corrupted) pairs.
    Pairs { pairs: Vec<(Triple, Triple)>, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Entities,
    Relations,
    Filters,
    Biases,
    Weight,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Entities => "entities",
            Block::Relations => "relations",
            Block::Filters => "filters",
            Block::Biases => "biases",
            Block::Weight => "weight",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: Block,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err <= self.tolerance)
    }
}

/// One scalar parameter of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Coord {
    block: Block,
    index: usize,
}

fn param_mut(model: &mut Model, c: Coord) -> &mut f64 {
    let k = model.emb().k();
    match (c.block, model) {
        (Block::Entities, m) => &mut m.emb_mut().entity_mut(c.index / k)[c.index % k],
        (Block::Relations, m) => &mut m.emb_mut().relation_mut(c.index / k)[c.index % k],
        (Block::Filters, Model::ConvKb { params, .. }) => &mut params.filters.as_flattened_mut()[c.index],
        (Block::Biases, Model::ConvKb { params, .. }) => &mut params.biases[c.index],
        (Block::Weight, Model::ConvKb { params, .. }) => &mut params.weight[c.index],
        (block, Model::TransE { .. }) => panic!("TransE has no {} block", block.name()),
    }
}

fn loss(model: &Model, sample: &CheckSample) -> Result<f64> {
    match (model, sample) {
        (Model::ConvKb { emb, params }, CheckSample::Labeled { batch, lambda }) => {
            Ok(loss_convkb(batch, params, emb, *lambda))
        }
        (Model::TransE { emb, norm }, CheckSample::Pairs { pairs, gamma }) => {
            Ok(loss_transe(pairs, emb, *norm, *gamma))
        }
        _ => Err(Error::Config("gradient-check sample does not match the model".into())),
    }
}

fn analytic(model: &Model, sample: &CheckSample) -> Result<GradientSet> {
    match (model, sample) {
        (Model::ConvKb { emb, params }, CheckSample::Labeled { batch, lambda }) => {
            Ok(grad_convkb(batch, params, emb, *lambda)?.1)
        }
        (Model::TransE { emb, norm }, CheckSample::Pairs { pairs, gamma }) => {
            Ok(grad_transe(pairs, emb, *norm, *gamma).1)
        }
        _ => Err(Error::Config("gradient-check sample does not match the model".into())),
    }
}

/// Every quantity whose zero crossing is a point of non-differentiability.
fn kink_arguments(model: &Model, sample: &CheckSample) -> Vec<f64> {
    let mut out = Vec::new();
    match (model, sample) {
        (Model::ConvKb { emb, params }, CheckSample::Labeled { batch, .. }) => {
            if params.activation.has_kink() {
                for lt in batch {
                    let a = emb.triple_matrix(lt.triple);
                    for (filter, &bias) in params.filters.iter().zip(&params.biases) {
                        out.extend((0..a.k()).map(|i| pre_activation(filter, a.row(i), bias)));
                    }
                }
            }
        }
        (Model::TransE { emb, norm }, CheckSample::Pairs { pairs, gamma }) => {
            for &(pos, neg) in pairs {
                let sp = crate::model::score_transe(emb, pos, *norm);
                let sn = crate::model::score_transe(emb, neg, *norm);
                out.push(gamma + sp - sn);
                if *norm == Norm::L1 {
                    for t in [pos, neg] {
                        let (h, r, tl) = (emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail));
                        out.extend((0..emb.k()).map(|i| h[i] + r[i] - tl[i]));
                    }
                }
            }
        }
        _ => {}
    }
    out
}

fn analytic_component(grads: &GradientSet, c: Coord, k: usize) -> f64 {
    let row =
        |rows: &std::collections::BTreeMap<usize, Vec<f64>>| rows.get(&(c.index / k)).map_or(0.0, |r| r[c.index % k]);
    match c.block {
        Block::Entities => row(&grads.entities),
        Block::Relations => row(&grads.relations),
        Block::Filters => grads.filters.as_ref().map_or(0.0, |f| f.as_flattened()[c.index]),
        Block::Biases => grads.biases.as_ref().map_or(0.0, |b| b[c.index]),
        Block::Weight => grads.weight.as_ref().map_or(0.0, |w| w[c.index]),
    }
}

fn coordinates(model: &Model, sample: &CheckSample) -> Vec<Coord> {
    let k = model.emb().k();
    let mut entities = std::collections::BTreeSet::new();
    let mut relations = std::collections::BTreeSet::new();
    let mut note = |t: Triple| {
        entities.insert(t.head);
        entities.insert(t.tail);
        relations.insert(t.relation);
    };
    match sample {
        CheckSample::Labeled { batch, .. } => batch.iter().for_each(|lt| note(lt.triple)),
        CheckSample::Pairs { pairs, .. } => pairs.iter().for_each(|&(p, n)| {
            note(p);
            note(n);
        }),
    }
    let mut coords = Vec::new();
    for e in entities {
        coords.extend((0..k).map(|i| Coord {
            block: Block::Entities,
            index: e * k + i,
        }));
    }
    for r in relations {
        coords.extend((0..k).map(|i| Coord {
            block: Block::Relations,
            index: r * k + i,
        }));
    }
    if let Some(p) = model.conv() {
        coords.extend((0..p.tau() * 3).map(|index| Coord {
            block: Block::Filters,
            index,
        }));
        coords.extend((0..p.tau()).map(|index| Coord {
            block: Block::Biases,
            index,
        }));
        coords.extend((0..p.weight.len()).map(|index| Coord {
            block: Block::Weight,
            index,
        }));
    }
    coords
}

/// Compares analytic gradients with central differences over every parameter
/// the sample touches.
pub fn finite_diff_check(model: &Model, sample: &CheckSample, h: f64, tol: f64) -> Result<CheckReport> {
    finite_diff_check_with(model, sample, h, tol, None)
}

/// As [`finite_diff_check`], optionally multiplying the largest checked
/// analytic component by `corrupt_factor` first (detector self-test).
pub fn finite_diff_check_with(
    model: &Model,
    sample: &CheckSample,
    h: f64,
    tol: f64,
    corrupt_factor: Option<f64>,
) -> Result<CheckReport> {
    let k = model.emb().k();
    let grads = analytic(model, sample)?;
    let base_kinks = kink_arguments(model, sample);

    struct Entry {
        block: Block,
        analytic: f64,
        numeric: f64,
        skipped: bool,
    }
    let mut entries = Vec::new();
    let mut probe = model.clone();
    for c in coordinates(model, sample) {
        let original = *param_mut(&mut probe, c);
        *param_mut(&mut probe, c) = original + h;
        let plus = loss(&probe, sample)?;
        let plus_kinks = kink_arguments(&probe, sample);
        *param_mut(&mut probe, c) = original - h;
        let minus = loss(&probe, sample)?;
        let minus_kinks = kink_arguments(&probe, sample);
        *param_mut(&mut probe, c) = original;

        let skipped = base_kinks
            .iter()
            .zip(&plus_kinks)
            .zip(&minus_kinks)
            .any(|((&z, &zp), &zm)| zp != zm && (z.abs() < 2.0 * h || (zp > 0.0) != (zm > 0.0)));
        entries.push(Entry {
            block: c.block,
            analytic: analytic_component(&grads, c, k),
            numeric: (plus - minus) / (2.0 * h),
            skipped,
        });
    }

    if let Some(factor) = corrupt_factor {
        if let Some(target) = entries
            .iter_mut()
            .filter(|e| !e.skipped)
            .max_by(|a, b| a.analytic.abs().total_cmp(&b.analytic.abs()))
        {
            target.analytic *= factor;
        }
    }

    let mut blocks: Vec<BlockReport> = Vec::new();
    for e in &entries {
        let report = match blocks.iter_mut().find(|b| b.block == e.block) {
            Some(b) => b,
            None => {
                blocks.push(BlockReport {
                    block: e.block,
                    max_rel_err: 0.0,
                    checked: 0,
                    skipped: 0,
                });
                blocks.last_mut().expect("just pushed")
            }
        };
        if e.skipped {
            report.skipped += 1;
            continue;
        }
        let denom = e.analytic.abs().max(e.numeric.abs()).max(REL_ERR_FLOOR);
        let err = (e.analytic - e.numeric).abs() / denom;
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
    }
    Ok(CheckReport { blocks, tolerance: tol })
}

/// Shape of one randomized gradient-check instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub model: ModelKind,
    pub k: usize,
    pub tau: usize,
    pub activation: Activation,
    pub norm: Norm,
}

impl InstanceSpec {
    /// Kinked objectives are checked at the looser tolerance.
    pub fn tolerance(&self) -> f64 {
        let smooth = match self.model {
            ModelKind::ConvKb => !self.activation.has_kink(),
            ModelKind::TransE => self.norm == Norm::L2,
        };
        if smooth {
            SMOOTH_TOLERANCE
        } else {
            KINKED_TOLERANCE
        }
    }

    pub fn describe(&self) -> String {
        match self.model {
            ModelKind::ConvKb => format!("convkb k={} tau={} g={}", self.k, self.tau, self.activation.name()),
            ModelKind::TransE => format!("transe k={} p={}", self.k, self.norm.p()),
        }
    }
}

const INSTANCE_ENTITIES: usize = 6;
const INSTANCE_RELATIONS: usize = 3;
const INSTANCE_BATCH: usize = 4;

/// Draws a random model and sample matching `spec`.
pub fn random_instance<R: Rng + ?Sized>(spec: &InstanceSpec, rng: &mut R) -> (Model, CheckSample) {
    let k = spec.k;
    let mut uniform = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..scale)).collect() };
    let entities = uniform(INSTANCE_ENTITIES * k, 1.0);
    let relations = uniform(INSTANCE_RELATIONS * k, 1.0);
    let emb = EmbeddingStore::from_raw(k, entities, relations).expect("finite random embeddings");
    let random_triple = |rng: &mut R| {
        Triple::new(
            rng.random_range(0..INSTANCE_ENTITIES),
            rng.random_range(0..INSTANCE_RELATIONS),
            rng.random_range(0..INSTANCE_ENTITIES),
        )
    };
    match spec.model {
        ModelKind::ConvKb => {
            let tau = spec.tau;
            let filters = (0..tau)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let biases = (0..tau).map(|_| rng.random_range(-0.2..0.2)).collect();
            let weight = (0..tau * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let params = ConvKbParams {
                filters,
                biases,
                weight,
                activation: spec.activation,
            };
            let batch = (0..INSTANCE_BATCH)
                .map(|_| LabeledTriple {
                    triple: random_triple(rng),
                    label: if rng.random_bool(0.5) {
                        Label::Valid
                    } else {
                        Label::Corrupted
                    },
                })
                .collect();
            let lambda = rng.random_range(0.0..0.1);
            (
                Model::convkb(emb, params).expect("consistent shapes"),
                CheckSample::Labeled { batch, lambda },
            )
        }
        ModelKind::TransE => {
            let pairs: Vec<(Triple, Triple)> = (0..INSTANCE_BATCH)
                .map(|_| (random_triple(rng), random_triple(rng)))
                .collect();
            // Choose the margin so that every hinge is active by at least 1.
            let gap = pairs
                .iter()
                .map(|&(p, n)| {
                    crate::model::score_transe(&emb, n, spec.norm) - crate::model::score_transe(&emb, p, spec.norm)
                })
                .fold(0.0, f64::max);
            let gamma = gap + 1.0 + rng.random_range(0.0..1.0);
            (
                Model::TransE { emb, norm: spec.norm },
                CheckSample::Pairs { pairs, gamma },
            )
        }
    }
}

/// Options for a batch of randomized checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub h: f64,
    /// Restrict ConvKB instances to one activation; otherwise ReLU and square alternate.
    pub activation: Option<Activation>,
    /// Restrict to one model; otherwise both alternate.
    pub model: Option<ModelKind>,
    pub corrupt: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            instances: 100,
            seed: 7,
            h: DEFAULT_STEP,
            activation: None,
            model: None,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub spec: InstanceSpec,
    pub report: CheckReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub results: Vec<InstanceResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.report.passed())
    }
}

const SUITE_K: [usize; 3] = [2, 4, 8];
const SUITE_TAU: [usize; 3] = [1, 3, 5];

/// Runs `config.instances` randomized checks, cycling through k ∈ {2, 4, 8},
/// τ ∈ {1, 3, 5}, both models, and (for ConvKB) ReLU and square activations.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut rng = seeded_rng(config.seed, 0);
    let mut results = Vec::with_capacity(config.instances);
    for i in 0..config.instances {
        let model = config.model.unwrap_or(if i % 2 == 0 {
            ModelKind::ConvKb
        } else {
            ModelKind::TransE
        });
        let activation = config.activation.unwrap_or(if (i / 2) % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Square
        });
        let norm = if (i / 2) % 2 == 0 { Norm::L1 } else { Norm::L2 };
        let spec = InstanceSpec {
            model,
            k: SUITE_K[i % 3],
            tau: SUITE_TAU[(i / 3) % 3],
            activation,
            norm,
        };
        let (m, sample) = random_instance(&spec, &mut rng);
        let factor = config.corrupt.then_some(1.01);
        let report = finite_diff_check_with(&m, &sample, config.h, spec.tolerance(), factor)?;
        results.push(InstanceResult { spec, report });
    }
    Ok(SuiteReport { results })
}
