//! Embedding tables, ConvKB parameters, and the two scoring functions.
//!
//! Both scores are implausibility scores: lower means more likely valid.
//!
//! ConvKB stacks `(v_h, v_r, v_t)` into a `k × 3` matrix, sweeps each width-3
//! filter over its rows to get a length-`k` feature map, concatenates the
//! `τ` maps filter-major and takes the dot product with a weight vector of
//! length `τ·k`. With one filter `[1, 1, -1]`, zero bias, `g = |x|` and an
//! all-ones weight it is exactly TransE under the L1 norm (`g = x²` gives L2).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kb::{Side, Triple};
use crate::seeded_rng;

const STREAM_EMBEDDINGS: u64 = 1;
const STREAM_CONV: u64 = 2;

/// Standard deviation of the truncated normal used for filters and weights.
pub const TRUNCATED_NORMAL_SIGMA: f64 = 0.1;

/// Filter used by the fixed-vector initialization scheme.
pub const FIXED_FILTER: [f64; 3] = [0.1, 0.1, -0.1];

/// Activation applied to each convolution output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Abs,
    Square,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Abs => x.abs(),
            Activation::Square => x * x,
            Activation::Identity => x,
        }
    }

    /// Derivative, with the subgradient fixed to 0 at the kinks of ReLU and |x|.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Activation::Square => 2.0 * x,
            Activation::Identity => 1.0,
        }
    }

    /// True for activations with a non-differentiable point at 0.
    pub fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::Abs)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Abs => "abs",
            Activation::Square => "square",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "abs" => Ok(Activation::Abs),
            "square" => Ok(Activation::Square),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Norm order of the TransE distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            other => Err(Error::Config(format!("norm order must be 1 or 2, got {other}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    /// `|x|^p`.
    #[inline]
    pub fn pow(self, x: f64) -> f64 {
        match self {
            Norm::L1 => x.abs(),
            Norm::L2 => x * x,
        }
    }
}

/// How ConvKB filters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterInit {
    /// Mean 0, σ = 0.1, resampled outside ±2σ.
    TruncatedNormal,
    /// Every filter set to `[0.1, 0.1, -0.1]`.
    Fixed,
}

impl FilterInit {
    pub fn name(self) -> &'static str {
        match self {
            FilterInit::TruncatedNormal => "tnormal",
            FilterInit::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for FilterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tnormal" | "truncated-normal" => Ok(FilterInit::TruncatedNormal),
            "fixed" | "fixed-vector" => Ok(FilterInit::Fixed),
            other => Err(Error::Config(format!("unknown filter init {other:?}"))),
        }
    }
}

/// Dense `k`-dimensional vectors for every entity and relation, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    k: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl EmbeddingStore {
    pub fn zeros(k: usize, n_entities: usize, n_relations: usize) -> Self {
        EmbeddingStore {
            k,
            entities: vec![0.0; k * n_entities],
            relations: vec![0.0; k * n_relations],
        }
    }

    /// Wraps row-major buffers; lengths must be multiples of `k` and values finite.
    pub fn from_raw(k: usize, entities: Vec<f64>, relations: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !entities.len().is_multiple_of(k) || !relations.len().is_multiple_of(k) {
            return Err(Error::Config(format!(
                "embedding buffers of length {} / {} are not multiples of k={k}",
                entities.len(),
                relations.len()
            )));
        }
        if entities.iter().chain(&relations).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding value".into()));
        }
        Ok(EmbeddingStore { k, entities, relations })
    }

    pub fn from_rows(entities: &[Vec<f64>], relations: &[Vec<f64>]) -> Result<Self> {
        let k = entities
            .first()
            .or(relations.first())
            .map(Vec::len)
            .ok_or_else(|| Error::Config("no embedding rows".into()))?;
        if entities.iter().chain(relations).any(|row| row.len() != k) {
            return Err(Error::Config("embedding rows have differing lengths".into()));
        }
        EmbeddingStore::from_raw(k, entities.concat(), relations.concat())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.k
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.k
    }

    #[inline]
    pub fn entity(&self, e: usize) -> &[f64] {
        &self.entities[e * self.k..(e + 1) * self.k]
    }

    #[inline]
    pub fn entity_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.entities[e * self.k..(e + 1) * self.k]
    }

    #[inline]
    pub fn relation(&self, r: usize) -> &[f64] {
        &self.relations[r * self.k..(r + 1) * self.k]
    }

    #[inline]
    pub fn relation_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.relations[r * self.k..(r + 1) * self.k]
    }

    pub fn entity_data(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_data(&self) -> &[f64] {
        &self.relations
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    /// The `k × 3` matrix `[v_h, v_r, v_t]` for a triple.
    pub fn triple_matrix(&self, t: Triple) -> TripleMatrix<'_> {
        TripleMatrix {
            head: self.entity(t.head),
            relation: self.relation(t.relation),
            tail: self.entity(t.tail),
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        let n = self.num_entities();
        t.head < n && t.tail < n && t.relation < self.num_relations()
    }
}

/// Column view `(v_h, v_r, v_t)` of one triple.
#[derive(Debug, Clone, Copy)]
pub struct TripleMatrix<'a> {
    pub head: &'a [f64],
    pub relation: &'a [f64],
    pub tail: &'a [f64],
}

impl TripleMatrix<'_> {
    pub fn k(&self) -> usize {
        self.head.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> [f64; 3] {
        [self.head[i], self.relation[i], self.tail[i]]
    }
}

/// Filter bank, per-filter biases, and output weight vector of ConvKB.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKbParams {
    pub filters: Vec<[f64; 3]>,
    pub biases: Vec<f64>,
    /// Length `τ·k`, filter-major: entries `j·k .. (j+1)·k` weight filter `j`'s map.
    pub weight: Vec<f64>,
    pub activation: Activation,
}

impl ConvKbParams {
    pub fn tau(&self) -> usize {
        self.filters.len()
    }

    /// Embedding dimension implied by the weight length.
    pub fn k(&self) -> usize {
        if self.filters.is_empty() {
            0
        } else {
            self.weight.len() / self.filters.len()
        }
    }

    /// Checks shapes against embedding dimension `k` and that all values are finite.
    pub fn validate(&self, k: usize) -> Result<()> {
        let tau = self.tau();
        if tau == 0 {
            return Err(Error::Config("ConvKB needs at least one filter".into()));
        }
        if self.biases.len() != tau {
            return Err(Error::Config(format!("{} biases for {tau} filters", self.biases.len())));
        }
        if self.weight.len() != tau * k {
            return Err(Error::Config(format!(
                "weight length {} does not equal tau*k = {}*{}",
                self.weight.len(),
                tau,
                k
            )));
        }
        let finite = self
            .filters
            .iter()
            .flatten()
            .chain(&self.biases)
            .chain(&self.weight)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical("non-finite ConvKB parameter".into()));
        }
        Ok(())
    }
}

fn truncated_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

/// Uniform `[-6/√k, 6/√k]` initialization of all entity and relation vectors.
pub fn init_transe_embeddings(seed: u64, k: usize, n_entities: usize, n_relations: usize) -> EmbeddingStore {
    assert!(k >= 1, "embedding dimension must be at least 1");
    let mut rng = seeded_rng(seed, STREAM_EMBEDDINGS);
    let bound = 6.0 / (k as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n * k).map(|_| rng.random_range(-bound..=bound)).collect() };
    let entities = draw(n_entities);
    let relations = draw(n_relations);
    EmbeddingStore { k, entities, relations }
}

/// Fresh ConvKB parameters: filters per `scheme`, zero biases, truncated-normal
/// weights, ReLU activation.
pub fn init_convkb_params(seed: u64, k: usize, tau: usize, scheme: FilterInit) -> ConvKbParams {
    assert!(k >= 1 && tau >= 1, "k and tau must be at least 1");
    let mut rng = seeded_rng(seed, STREAM_CONV);
    let filters = match scheme {
        FilterInit::Fixed => vec![FIXED_FILTER; tau],
        FilterInit::TruncatedNormal => (0..tau)
            .map(|_| {
                [
                    truncated_normal(&mut rng, TRUNCATED_NORMAL_SIGMA),
                    truncated_normal(&mut rng, TRUNCATED_NORMAL_SIGMA),
                    truncated_normal(&mut rng, TRUNCATED_NORMAL_SIGMA),
                ]
            })
            .collect(),
    };
    let weight = (0..tau * k)
        .map(|_| truncated_normal(&mut rng, TRUNCATED_NORMAL_SIGMA))
        .collect();
    ConvKbParams {
        filters,
        biases: vec![0.0; tau],
        weight,
        activation: Activation::Relu,
    }
}

/// `Σ_i |v_h,i + v_r,i − v_t,i|^p`.
pub fn score_transe(emb: &EmbeddingStore, t: Triple, norm: Norm) -> f64 {
    let (h, r, tl) = (emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail));
    h.iter().zip(r).zip(tl).map(|((h, r), t)| norm.pow(h + r - t)).sum()
}

/// Pre-activation `ω·row + b`, evaluated as `((ω0·h + ω1·r) + ω2·t) + b`.
#[inline]
pub(crate) fn pre_activation(filter: &[f64; 3], row: [f64; 3], bias: f64) -> f64 {
    filter[0] * row[0] + filter[1] * row[1] + filter[2] * row[2] + bias
}

/// One feature map: element `i` is `g(ω·A_i + b)`.
pub fn feature_map(a: &TripleMatrix<'_>, filter: &[f64; 3], bias: f64, g: Activation) -> Vec<f64> {
    (0..a.k())
        .map(|i| g.apply(pre_activation(filter, a.row(i), bias)))
        .collect()
}

#[inline]
fn convkb_unchecked(params: &ConvKbParams, a: &TripleMatrix<'_>) -> f64 {
    let k = a.k();
    let g = params.activation;
    let mut score = 0.0;
    for (j, (filter, &bias)) in params.filters.iter().zip(&params.biases).enumerate() {
        let w = &params.weight[j * k..(j + 1) * k];
        for (i, &wi) in w.iter().enumerate() {
            score += wi * g.apply(pre_activation(filter, a.row(i), bias));
        }
    }
    score
}

/// `concat(g([v_h, v_r, v_t] ∗ Ω)) · w`.
pub fn score_convkb(params: &ConvKbParams, emb: &EmbeddingStore, t: Triple) -> Result<f64> {
    params.validate(emb.k())?;
    if !emb.contains(&t) {
        return Err(Error::Config(format!("triple {t} outside the embedding tables")));
    }
    Ok(convkb_unchecked(params, &emb.triple_matrix(t)))
}

/// Anything that can score triples. Evaluation is written against this trait.
pub trait Scorer: Sync {
    fn score(&self, t: Triple) -> f64;

    /// Scores `t` with every entity `0..out.len()` substituted on `side`.
    ///
    /// Implementations must agree bitwise with [`Scorer::score`].
    fn score_candidates(&self, t: Triple, side: Side, out: &mut [f64]) {
        for (e, slot) in out.iter_mut().enumerate() {
            *slot = self.score(t.with_entity(side, e));
        }
    }
}

impl<F> Scorer for F
where
    F: Fn(Triple) -> f64 + Sync,
{
    fn score(&self, t: Triple) -> f64 {
        self(t)
    }
}

/// Which model a [`Model`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    ConvKb,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::ConvKb => "convkb",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(ModelKind::TransE),
            "convkb" => Ok(ModelKind::ConvKb),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// A trained or trainable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TransE { emb: EmbeddingStore, norm: Norm },
    ConvKb { emb: EmbeddingStore, params: ConvKbParams },
}

impl Model {
    pub fn convkb(emb: EmbeddingStore, params: ConvKbParams) -> Result<Self> {
        params.validate(emb.k())?;
        Ok(Model::ConvKb { emb, params })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::TransE { .. } => ModelKind::TransE,
            Model::ConvKb { .. } => ModelKind::ConvKb,
        }
    }

    pub fn emb(&self) -> &EmbeddingStore {
        match self {
            Model::TransE { emb, .. } | Model::ConvKb { emb, .. } => emb,
        }
    }

    pub fn emb_mut(&mut self) -> &mut EmbeddingStore {
        match self {
            Model::TransE { emb, .. } | Model::ConvKb { emb, .. } => emb,
        }
    }

    pub fn conv(&self) -> Option<&ConvKbParams> {
        match self {
            Model::ConvKb { params, .. } => Some(params),
            Model::TransE { .. } => None,
        }
    }
}

impl Scorer for Model {
    fn score(&self, t: Triple) -> f64 {
        match self {
            Model::TransE { emb, norm } => score_transe(emb, t, *norm),
            Model::ConvKb { emb, params } => convkb_unchecked(params, &emb.triple_matrix(t)),
        }
    }

    fn score_candidates(&self, t: Triple, side: Side, out: &mut [f64]) {
        match (self, side) {
            (Model::TransE { emb, norm }, Side::Tail) => {
                let hr: Vec<f64> = emb
                    .entity(t.head)
                    .iter()
                    .zip(emb.relation(t.relation))
                    .map(|(h, r)| h + r)
                    .collect();
                for (e, slot) in out.iter_mut().enumerate() {
                    *slot = hr.iter().zip(emb.entity(e)).map(|(hr, t)| norm.pow(hr - t)).sum();
                }
            }
            (Model::ConvKb { emb, params }, _) => {
                let k = emb.k();
                let g = params.activation;
                let rel = emb.relation(t.relation);
                let fixed = emb.entity(t.entity(side.other()));
                for (e, slot) in out.iter_mut().enumerate() {
                    let moving = emb.entity(e);
                    let (head, tail) = match side {
                        Side::Head => (moving, fixed),
                        Side::Tail => (fixed, moving),
                    };
                    let mut score = 0.0;
                    for (j, (filter, &bias)) in params.filters.iter().zip(&params.biases).enumerate() {
                        let w = &params.weight[j * k..(j + 1) * k];
                        for i in 0..k {
                            let pre = pre_activation(filter, [head[i], rel[i], tail[i]], bias);
                            score += w[i] * g.apply(pre);
                        }
                    }
                    *slot = score;
                }
            }
            _ => {
                for (e, slot) in out.iter_mut().enumerate() {
                    *slot = self.score(t.with_entity(side, e));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(h: &[f64], r: &[f64], t: &[f64]) -> EmbeddingStore {
        EmbeddingStore::from_rows(&[h.to_vec(), t.to_vec()], &[r.to_vec()]).unwrap()
    }

    const T: Triple = Triple::new(0, 0, 1);

    #[test]
    fn transe_examples() {
        assert_eq!(score_transe(&store(&[1., 0.], &[0., 1.], &[1., 1.]), T, Norm::L1), 0.0);
        let emb = store(&[1., 2.], &[0., 0.], &[0., 0.]);
        assert_eq!(score_transe(&emb, T, Norm::L1), 3.0);
        assert_eq!(score_transe(&emb, T, Norm::L2), 5.0);
    }

    #[test]
    fn feature_map_examples() {
        let emb = store(&[0.5], &[0.5], &[1.0]);
        let a = emb.triple_matrix(T);
        assert_eq!(feature_map(&a, &[1., 1., -1.], 0.0, Activation::Relu), vec![0.0]);

        let emb = store(&[1.0], &[1.0], &[1.0]);
        let a = emb.triple_matrix(T);
        assert_eq!(feature_map(&a, &[2., 0., 1.], -1.0, Activation::Relu), vec![2.0]);

        let emb = store(&[0.1], &[0.2], &[0.9]);
        let a = emb.triple_matrix(T);
        let v = feature_map(&a, &[1., 1., -1.], 0.0, Activation::Abs);
        assert!((v[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn convkb_hand_example() {
        let emb = store(&[0.3, 0.1], &[0.2, 0.4], &[0.6, 0.2]);
        let params = ConvKbParams {
            filters: vec![[1., 1., -1.]],
            biases: vec![0.0],
            weight: vec![1.0, 1.0],
            activation: Activation::Relu,
        };
        let s = score_convkb(&params, &emb, T).unwrap();
        assert!((s - 0.3).abs() < 1e-15);
    }

    #[test]
    fn convkb_shape_mismatch_is_config_error() {
        let emb = store(&[0.3, 0.1], &[0.2, 0.4], &[0.6, 0.2]);
        let params = ConvKbParams {
            filters: vec![[1., 1., -1.]],
            biases: vec![0.0],
            weight: vec![1.0, 1.0, 1.0],
            activation: Activation::Relu,
        };
        let err = score_convkb(&params, &emb, T).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn init_transe_is_deterministic_and_bounded() {
        let a = init_transe_embeddings(3, 36, 10, 4);
        let b = init_transe_embeddings(3, 36, 10, 4);
        assert_eq!(a, b);
        assert!(a.entity_data().iter().chain(a.relation_data()).all(|v| v.abs() <= 1.0));
        assert_ne!(a, init_transe_embeddings(4, 36, 10, 4));
    }

    #[test]
    fn init_transe_sample_mean_near_zero() {
        let emb = init_transe_embeddings(11, 50, 10, 1);
        let values = emb.entity_data();
        assert_eq!(values.len(), 500);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn init_convkb_fixed_and_tnormal() {
        let p = init_convkb_params(1, 4, 3, FilterInit::Fixed);
        assert!(p.filters.iter().all(|f| *f == [0.1, 0.1, -0.1]));
        assert!(p.biases.iter().all(|&b| b == 0.0));
        assert_eq!(p.weight.len(), 12);

        let p = init_convkb_params(1, 50, 200, FilterInit::TruncatedNormal);
        assert!(p.biases.iter().all(|&b| b == 0.0));
        assert!(p.filters.iter().flatten().chain(&p.weight).all(|v| v.abs() <= 0.2));
        assert_eq!(p, init_convkb_params(1, 50, 200, FilterInit::TruncatedNormal));
    }

    #[test]
    fn relu_feature_maps_nonnegative() {
        let emb = init_transe_embeddings(5, 8, 4, 2);
        let a = emb.triple_matrix(Triple::new(1, 1, 3));
        for f in [[1.0, -2.0, 0.5], [-0.3, 0.2, 0.9]] {
            assert!(feature_map(&a, &f, -0.1, Activation::Relu).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn candidate_scores_match_single_scores_bitwise() {
        let emb = init_transe_embeddings(9, 6, 7, 3);
        let mut params = init_convkb_params(9, 6, 4, FilterInit::TruncatedNormal);
        params.biases = vec![0.05, -0.02, 0.0, 0.1];
        let models = [
            Model::TransE {
                emb: emb.clone(),
                norm: Norm::L1,
            },
            Model::TransE {
                emb: emb.clone(),
                norm: Norm::L2,
            },
            Model::convkb(emb, params).unwrap(),
        ];
        let t = Triple::new(2, 1, 5);
        for model in &models {
            for side in [Side::Head, Side::Tail] {
                let mut out = vec![0.0; 7];
                model.score_candidates(t, side, &mut out);
                for (e, &s) in out.iter().enumerate() {
                    assert_eq!(s.to_bits(), model.score(t.with_entity(side, e)).to_bits());
                }
            }
        }
    }
}
