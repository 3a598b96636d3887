//! Central-difference gradient checking against the tape.

use super::params::{GradSet, ParamStore};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Estimates the gradient of `loss` for every parameter entry by central
/// differences, with the step scaled by the entry's magnitude.
pub fn numeric_grads(
    store: &mut ParamStore,
    mut loss: impl FnMut(&ParamStore) -> f64,
    step: f64,
) -> GradSet {
    let mut grads = GradSet::empty(store);
    for p in 0..store.len() {
        let entries = store.by_index(p).len();
        let (rows, cols) = store.by_index(p).shape();
        let mut tensor = super::tensor::Tensor::zeros(rows, cols);
        for e in 0..entries {
            let orig = store.by_index(p).data[e];
            let h = step * (1.0 + orig.abs());
            store.by_index_mut(p).data[e] = orig + h;
            let up = loss(store);
            store.by_index_mut(p).data[e] = orig - h;
            let down = loss(store);
            store.by_index_mut(p).data[e] = orig;
            tensor.data[e] = (up - down) / (2.0 * h);
        }
        grads.accumulate(p, &tensor);
    }
    grads
}

/// Largest relative disagreement between two gradient sets over every
/// parameter entry. Missing tensors count as zero; `floor` keeps tiny
/// denominators from inflating noise.
pub fn max_rel_error(store: &ParamStore, a: &GradSet, b: &GradSet, floor: f64) -> f64 {
    let mut worst = 0.0_f64;
    for p in 0..store.len() {
        let entries = store.by_index(p).len();
        for e in 0..entries {
            let av = a.get(p).map_or(0.0, |t| t.data[e]);
            let bv = b.get(p).map_or(0.0, |t| t.data[e]);
            let rel = (av - bv).abs() / av.abs().max(bv.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}
