//! SGD and sparse Adam over the parameter blocks of a [`Model`].
//!
//! Only the blocks present in a [`GradientSet`] are touched: embedding rows
//! missing from the sparse maps keep both their values and their moments. The
//! Adam step counter is global, so bias correction uses the number of calls so
//! far, not the number of times a particular row was updated.

use log::warn;

use crate::model::{EmbeddingStore, Model};
use crate::train::grad::GradientSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moments mirroring every parameter block of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m_entities: Vec<f64>,
    pub v_entities: Vec<f64>,
    pub m_relations: Vec<f64>,
    pub v_relations: Vec<f64>,
    pub m_filters: Vec<f64>,
    pub v_filters: Vec<f64>,
    pub m_biases: Vec<f64>,
    pub v_biases: Vec<f64>,
    pub m_weight: Vec<f64>,
    pub v_weight: Vec<f64>,
}

impl AdamState {
    /// Zeroed moments shaped like `model`, with the default constants.
    pub fn new(model: &Model) -> Self {
        let emb = model.emb();
        let (n_filters, n_biases, n_weight) = model
            .conv()
            .map_or((0, 0, 0), |p| (p.tau() * 3, p.tau(), p.weight.len()));
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m_entities: vec![0.0; emb.entity_data().len()],
            v_entities: vec![0.0; emb.entity_data().len()],
            m_relations: vec![0.0; emb.relation_data().len()],
            v_relations: vec![0.0; emb.relation_data().len()],
            m_filters: vec![0.0; n_filters],
            v_filters: vec![0.0; n_filters],
            m_biases: vec![0.0; n_biases],
            v_biases: vec![0.0; n_biases],
            m_weight: vec![0.0; n_weight],
            v_weight: vec![0.0; n_weight],
        }
    }

    /// True when every moment block has the length `model` requires.
    pub fn matches(&self, model: &Model) -> bool {
        let fresh = AdamState::new(model);
        let lens = |s: &AdamState| {
            [
                s.m_entities.len(),
                s.v_entities.len(),
                s.m_relations.len(),
                s.v_relations.len(),
                s.m_filters.len(),
                s.v_filters.len(),
                s.m_biases.len(),
                s.v_biases.len(),
                s.m_weight.len(),
                s.v_weight.len(),
            ]
        };
        lens(self) == lens(&fresh)
    }
}

struct AdamCoeffs {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bias1: f64,
    bias2: f64,
    lr: f64,
}

#[inline]
fn adam_block(c: &AdamCoeffs, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / c.bias1;
        let v_hat = *v / c.bias2;
        *p -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

/// One Adam update of every block present in `grads`.
pub fn adam_step(state: &mut AdamState, grads: &GradientSet, model: &mut Model, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c = AdamCoeffs {
        beta1: state.beta1,
        beta2: state.beta2,
        epsilon: state.epsilon,
        bias1: 1.0 - state.beta1.powi(t),
        bias2: 1.0 - state.beta2.powi(t),
        lr,
    };
    let k = model.emb().k();
    {
        let emb = model.emb_mut();
        for (&e, g) in &grads.entities {
            let span = e * k..(e + 1) * k;
            adam_block(
                &c,
                emb.entity_mut(e),
                g,
                &mut state.m_entities[span.clone()],
                &mut state.v_entities[span],
            );
        }
        for (&r, g) in &grads.relations {
            let span = r * k..(r + 1) * k;
            adam_block(
                &c,
                emb.relation_mut(r),
                g,
                &mut state.m_relations[span.clone()],
                &mut state.v_relations[span],
            );
        }
    }
    if let Model::ConvKb { params, .. } = model {
        if let Some(g) = &grads.filters {
            adam_block(
                &c,
                params.filters.as_flattened_mut(),
                g.as_flattened(),
                &mut state.m_filters,
                &mut state.v_filters,
            );
        }
        if let Some(g) = &grads.biases {
            adam_block(&c, &mut params.biases, g, &mut state.m_biases, &mut state.v_biases);
        }
        if let Some(g) = &grads.weight {
            adam_block(&c, &mut params.weight, g, &mut state.m_weight, &mut state.v_weight);
        }
    }
}

/// `θ ← θ − lr·∇` for every block present in `grads`.
pub fn sgd_step(model: &mut Model, grads: &GradientSet, lr: f64) {
    fn step(param: &mut [f64], grad: &[f64], lr: f64) {
        param.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    }
    {
        let emb = model.emb_mut();
        for (&e, g) in &grads.entities {
            step(emb.entity_mut(e), g, lr);
        }
        for (&r, g) in &grads.relations {
            step(emb.relation_mut(r), g, lr);
        }
    }
    if let Model::ConvKb { params, .. } = model {
        if let Some(g) = &grads.filters {
            step(params.filters.as_flattened_mut(), g.as_flattened(), lr);
        }
        if let Some(g) = &grads.biases {
            step(&mut params.biases, g, lr);
        }
        if let Some(g) = &grads.weight {
            step(&mut params.weight, g, lr);
        }
    }
}

/// Rescales every entity row to unit L2 norm. Zero rows are left alone.
pub fn normalize_entities(emb: &mut EmbeddingStore) {
    let mut zero_rows = 0usize;
    for e in 0..emb.num_entities() {
        let row = emb.entity_mut(e);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_rows += 1;
            continue;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    if zero_rows > 0 {
        warn!("{zero_rows} zero entity rows left unnormalized");
    }
}
