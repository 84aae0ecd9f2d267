//! Analytic gradients of both training objectives.
//!
//! ConvKB backward pass for one labelled triple with score `f`:
//!
//! ```text
//! dL/df        = l · σ(l·f)
//! dL/dw[j,i]   = dL/df · g(z_ji)                 z_ji = ω_j · A_i + b_j
//! dL/dz_ji     = dL/df · w[j,i] · g'(z_ji)
//! dL/dω_j     += dL/dz_ji · A_i
//! dL/db_j     += dL/dz_ji
//! dL/dA_i     += dL/dz_ji · ω_j                  (columns h, r, t)
//! ```
//!
//! plus `λ·w` from the regularizer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kb::Triple;
use crate::model::{pre_activation, ConvKbParams, EmbeddingStore, Norm};
use crate::train::loss::{margin_loss, sigmoid, softplus};

/// Whether a training example is a known fact or a corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Valid,
    Corrupted,
}

impl Label {
    /// `+1` for valid, `-1` for corrupted.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Valid => 1.0,
            Label::Corrupted => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: Label,
}

impl LabeledTriple {
    pub fn valid(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: Label::Valid,
        }
    }

    pub fn corrupted(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: Label::Corrupted,
        }
    }
}

/// Gradients for one batch. Embedding rows are sparse; the ConvKB blocks are
/// dense and `None` for TransE.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientSet {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
    pub filters: Option<Vec<[f64; 3]>>,
    pub biases: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
}

impl GradientSet {
    pub fn entity_row(&mut self, e: usize, k: usize) -> &mut Vec<f64> {
        self.entities.entry(e).or_insert_with(|| vec![0.0; k])
    }

    pub fn relation_row(&mut self, r: usize, k: usize) -> &mut Vec<f64> {
        self.relations.entry(r).or_insert_with(|| vec![0.0; k])
    }

    pub fn is_finite(&self) -> bool {
        let rows = self.entities.values().chain(self.relations.values()).flatten();
        let dense = self
            .filters
            .iter()
            .flatten()
            .flatten()
            .chain(self.biases.iter().flatten())
            .chain(self.weight.iter().flatten());
        rows.chain(dense).all(|v| v.is_finite())
    }

    /// Adds `other` into `self` block by block.
    pub fn accumulate(&mut self, other: &GradientSet) {
        fn add_rows(dst: &mut BTreeMap<usize, Vec<f64>>, src: &BTreeMap<usize, Vec<f64>>) {
            for (&id, row) in src {
                let acc = dst.entry(id).or_insert_with(|| vec![0.0; row.len()]);
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        fn add_dense(dst: &mut Option<Vec<f64>>, src: &Option<Vec<f64>>) {
            if let Some(src) = src {
                let acc = dst.get_or_insert_with(|| vec![0.0; src.len()]);
                acc.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        add_rows(&mut self.entities, &other.entities);
        add_rows(&mut self.relations, &other.relations);
        if let Some(src) = &other.filters {
            let acc = self.filters.get_or_insert_with(|| vec![[0.0; 3]; src.len()]);
            for (a, b) in acc.iter_mut().zip(src) {
                for c in 0..3 {
                    a[c] += b[c];
                }
            }
        }
        add_dense(&mut self.biases, &other.biases);
        add_dense(&mut self.weight, &other.weight);
    }
}

/// Softplus loss of a labelled batch under ConvKB, plus `(λ/2)‖w‖²`.
pub fn loss_convkb(batch: &[LabeledTriple], params: &ConvKbParams, emb: &EmbeddingStore, lambda: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|lt| {
            let f = crate::model::score_convkb(params, emb, lt.triple).unwrap_or(f64::NAN);
            softplus(lt.label.sign() * f)
        })
        .sum();
    data + 0.5 * lambda * params.weight.iter().map(|w| w * w).sum::<f64>()
}

/// Loss and exact gradients of the ConvKB objective over `batch`.
///
/// Entity gradients accumulate across every occurrence in the batch.
pub fn grad_convkb(
    batch: &[LabeledTriple],
    params: &ConvKbParams,
    emb: &EmbeddingStore,
    lambda: f64,
) -> Result<(f64, GradientSet)> {
    let k = emb.k();
    params.validate(k)?;
    let tau = params.tau();
    let g = params.activation;

    let mut grads = GradientSet {
        filters: Some(vec![[0.0; 3]; tau]),
        biases: Some(vec![0.0; tau]),
        weight: Some(vec![0.0; tau * k]),
        ..GradientSet::default()
    };
    let mut loss = 0.0;
    let mut pre = vec![0.0; tau * k];
    let mut d_head = vec![0.0; k];
    let mut d_rel = vec![0.0; k];
    let mut d_tail = vec![0.0; k];

    for lt in batch {
        let t = lt.triple;
        if !emb.contains(&t) {
            return Err(Error::Config(format!("triple {t} outside the embedding tables")));
        }
        let a = emb.triple_matrix(t);

        let mut f = 0.0;
        for (j, (filter, &bias)) in params.filters.iter().zip(&params.biases).enumerate() {
            for i in 0..k {
                let z = pre_activation(filter, a.row(i), bias);
                pre[j * k + i] = z;
                f += params.weight[j * k + i] * g.apply(z);
            }
        }
        if !f.is_finite() {
            return Err(Error::Numerical(format!("non-finite ConvKB score for triple {t}")));
        }

        let l = lt.label.sign();
        loss += softplus(l * f);
        let d_f = l * sigmoid(l * f);

        d_head.iter_mut().for_each(|v| *v = 0.0);
        d_rel.iter_mut().for_each(|v| *v = 0.0);
        d_tail.iter_mut().for_each(|v| *v = 0.0);
        let d_filters = grads.filters.as_mut().expect("dense block");
        let d_biases = grads.biases.as_mut().expect("dense block");
        let d_weight = grads.weight.as_mut().expect("dense block");
        for (j, filter) in params.filters.iter().enumerate() {
            for i in 0..k {
                let idx = j * k + i;
                let z = pre[idx];
                d_weight[idx] += d_f * g.apply(z);
                let d_z = d_f * params.weight[idx] * g.derivative(z);
                if d_z == 0.0 {
                    continue;
                }
                let row = a.row(i);
                for c in 0..3 {
                    d_filters[j][c] += d_z * row[c];
                }
                d_biases[j] += d_z;
                d_head[i] += d_z * filter[0];
                d_rel[i] += d_z * filter[1];
                d_tail[i] += d_z * filter[2];
            }
        }
        add_into(grads.entity_row(t.head, k), &d_head);
        add_into(grads.relation_row(t.relation, k), &d_rel);
        add_into(grads.entity_row(t.tail, k), &d_tail);
    }

    loss += 0.5 * lambda * params.weight.iter().map(|w| w * w).sum::<f64>();
    let d_weight = grads.weight.as_mut().expect("dense block");
    d_weight
        .iter_mut()
        .zip(&params.weight)
        .for_each(|(d, w)| *d += lambda * w);

    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical("non-finite ConvKB loss or gradient".into()));
    }
    Ok((loss, grads))
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

/// Margin ranking loss summed over (valid, corrupted) pairs under TransE.
pub fn loss_transe(pairs: &[(Triple, Triple)], emb: &EmbeddingStore, norm: Norm, gamma: f64) -> f64 {
    pairs
        .iter()
        .map(|&(pos, neg)| {
            margin_loss(
                crate::model::score_transe(emb, pos, norm),
                crate::model::score_transe(emb, neg, norm),
                gamma,
            )
        })
        .sum()
}

/// Loss and subgradient of the TransE margin objective.
///
/// Pairs whose hinge is not strictly positive contribute nothing. Under L1 a
/// residual component that is exactly 0 contributes 0.
pub fn grad_transe(pairs: &[(Triple, Triple)], emb: &EmbeddingStore, norm: Norm, gamma: f64) -> (f64, GradientSet) {
    let k = emb.k();
    let mut grads = GradientSet::default();
    let mut loss = 0.0;
    let mut residual = vec![0.0; k];
    for &(pos, neg) in pairs {
        let hinge = gamma + crate::model::score_transe(emb, pos, norm) - crate::model::score_transe(emb, neg, norm);
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        for (t, sign) in [(pos, 1.0), (neg, -1.0)] {
            let (h, r, tl) = (emb.entity(t.head), emb.relation(t.relation), emb.entity(t.tail));
            for i in 0..k {
                let x = h[i] + r[i] - tl[i];
                residual[i] = sign
                    * match norm {
                        Norm::L1 => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Norm::L2 => 2.0 * x,
                    };
            }
            add_into(grads.entity_row(t.head, k), &residual);
            add_into(grads.relation_row(t.relation, k), &residual);
            grads
                .entity_row(t.tail, k)
                .iter_mut()
                .zip(&residual)
                .for_each(|(a, b)| *a -= b);
        }
    }
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_convkb_params, init_transe_embeddings, Activation, FilterInit};

    #[test]
    fn zero_embeddings_give_log2_and_zero_gradients() {
        let emb = EmbeddingStore::zeros(3, 4, 2);
        let params = init_convkb_params(1, 3, 2, FilterInit::TruncatedNormal);
        let batch = [
            LabeledTriple::valid(Triple::new(0, 0, 1)),
            LabeledTriple::corrupted(Triple::new(2, 1, 3)),
        ];
        let (loss, grads) = grad_convkb(&batch, &params, &emb, 0.0).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(grads.filters.unwrap().iter().flatten().all(|&v| v == 0.0));
        assert!(grads.weight.unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.entities.values().flatten().all(|&v| v == 0.0));
        assert!(grads.relations.values().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_matches_softplus_over_scores() {
        let emb = init_transe_embeddings(2, 4, 5, 2);
        let params = init_convkb_params(2, 4, 3, FilterInit::TruncatedNormal);
        let batch = [
            LabeledTriple::valid(Triple::new(0, 0, 1)),
            LabeledTriple::corrupted(Triple::new(4, 1, 3)),
        ];
        let (loss, _) = grad_convkb(&batch, &params, &emb, 0.01).unwrap();
        assert!((loss - loss_convkb(&batch, &params, &emb, 0.01)).abs() < 1e-14);
    }

    #[test]
    fn repeated_entity_gradients_add_up() {
        let emb = init_transe_embeddings(4, 4, 5, 2);
        let mut params = init_convkb_params(4, 4, 2, FilterInit::TruncatedNormal);
        params.activation = Activation::Square;
        let a = LabeledTriple::valid(Triple::new(0, 0, 1));
        let b = LabeledTriple::corrupted(Triple::new(0, 1, 3));
        let (_, both) = grad_convkb(&[a, b], &params, &emb, 0.0).unwrap();
        let (_, ga) = grad_convkb(&[a], &params, &emb, 0.0).unwrap();
        let (_, gb) = grad_convkb(&[b], &params, &emb, 0.0).unwrap();
        let mut sum = ga.clone();
        sum.accumulate(&gb);
        let row = &both.entities[&0];
        for (x, y) in row.iter().zip(&sum.entities[&0]) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in both.weight.unwrap().iter().zip(sum.weight.unwrap()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn satisfied_transe_pair_has_no_gradient() {
        let emb = EmbeddingStore::from_rows(&[vec![0.0], vec![0.0], vec![10.0]], &[vec![0.0]]).unwrap();
        let pair = (Triple::new(0, 0, 1), Triple::new(0, 0, 2));
        let (loss, grads) = grad_transe(&[pair], &emb, Norm::L1, 5.0);
        assert_eq!(loss, 0.0);
        assert!(grads.entities.is_empty() && grads.relations.is_empty());
    }

    #[test]
    fn transe_l1_zero_residual_component_contributes_nothing() {
        // pos residual = (0, 1), neg residual = (2, -2); hinge = γ + 1 - 4.
        let emb =
            EmbeddingStore::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![-1.0, 3.0]], &[vec![0.0, 0.0]]).unwrap();
        let pair = (Triple::new(0, 0, 1), Triple::new(0, 0, 2));
        let (loss, grads) = grad_transe(&[pair], &emb, Norm::L1, 10.0);
        assert_eq!(loss, 10.0 + 1.0 - 4.0);
        // Tail of the positive (entity 1) only sees -sign(pos residual) = (0, -1).
        assert_eq!(grads.entities[&1], vec![0.0, -1.0]);
        // Tail of the negative: +sign(neg residual) = (1, -1).
        assert_eq!(grads.entities[&2], vec![1.0, -1.0]);
    }

    #[test]
    fn grad_transe_loss_matches_margin_sum() {
        let emb = init_transe_embeddings(8, 5, 6, 2);
        let pairs = [
            (Triple::new(0, 0, 1), Triple::new(0, 0, 2)),
            (Triple::new(3, 1, 4), Triple::new(5, 1, 4)),
        ];
        for norm in [Norm::L1, Norm::L2] {
            let (loss, _) = grad_transe(&pairs, &emb, norm, 3.0);
            assert!((loss - loss_transe(&pairs, &emb, norm, 3.0)).abs() < 1e-14);
        }
    }
}
