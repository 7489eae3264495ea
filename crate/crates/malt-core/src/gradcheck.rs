//! Finite-difference gradient verification.
//!
//! The oracle is a central difference, (f(θ+h) - f(θ-h)) / 2h, compared to the
//! analytic gradient produced by the reverse sweep. Relative error is
//! |analytic - numeric| / max(1, |analytic|). The builder closure must be a
//! deterministic function of the store for the comparison to mean anything.

use crate::error::{MaltError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;

/// A loss builder: constructs the forward graph and returns the scalar loss node.
pub trait LossBuilder: Fn(&mut Graph, &ParamStore) -> Result<NodeId> {}
impl<F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>> LossBuilder for F {}

fn eval_loss(store: &ParamStore, build: &impl LossBuilder) -> Result<f64> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(MaltError::Contract(format!("loss is not finite: {v}")));
    }
    Ok(v)
}

/// Compare the analytic gradient of one parameter slot against the central
/// difference. Restores the parameter value before returning. The returned
/// value is the relative error.
pub fn finite_diff_check(
    store: &mut ParamStore,
    name: &str,
    index: usize,
    h: f64,
    build: &impl LossBuilder,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(MaltError::Contract("finite_diff_check: h must be > 0".into()));
    }
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic = store.grad(name)?.data()[index];

    store.perturb(name, index, h)?;
    let f_plus = eval_loss(store, build);
    store.perturb(name, index, -2.0 * h)?;
    let f_minus = eval_loss(store, build);
    store.perturb(name, index, h)?; // restore before error handling
    let (f_plus, f_minus) = (f_plus?, f_minus?);

    let numeric = (f_plus - f_minus) / (2.0 * h);
    Ok((analytic - numeric).abs() / f64::max(1.0, analytic.abs()))
}

/// One row of a gradient-check report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub index: usize,
    pub rel_error: f64,
}

/// Check a sample of `count` parameter slots, spread across all parameters in
/// name order, cycling through each tensor at seeded offsets. Returns the
/// per-slot report sorted worst-first.
pub fn check_sampled(
    store: &mut ParamStore,
    count: usize,
    h: f64,
    seed: u64,
    build: &impl LossBuilder,
) -> Result<Vec<CheckRow>> {
    let mut rng = crate::rng::Rng::new(seed);
    let names: Vec<String> = store.names().cloned().collect();
    if names.is_empty() {
        return Err(MaltError::Contract("check_sampled: empty store".into()));
    }
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let name = &names[i % names.len()];
        let numel = store.value(name)?.numel();
        let index = rng.below(numel as u64) as usize;
        let rel_error = finite_diff_check(store, name, index, h, build)?;
        rows.push(CheckRow {
            name: name.clone(),
            index,
            rel_error,
        });
    }
    rows.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    Ok(rows)
}
