//! Adam with bias correction, applied in place over a `ParamStore`.

use crate::error::{MaltError, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Consumes the
/// accumulated gradients and zeroes them afterwards.
pub fn adam_step(store: &mut ParamStore, adam: &AdamParams, t: u64) -> Result<()> {
    if t == 0 {
        return Err(MaltError::Contract(
            "adam_step: step index t must be >= 1 (bias correction divides by zero)".into(),
        ));
    }
    let bc1 = 1.0 - adam.beta1.powi(t as i32);
    let bc2 = 1.0 - adam.beta2.powi(t as i32);
    for (_, entry) in store.iter_mut() {
        let n = entry.value.numel();
        for i in 0..n {
            let g = entry.grad.data()[i];
            let m = &mut entry.m.data_mut()[i];
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            let m_hat = *m / bc1;
            let v = &mut entry.v.data_mut()[i];
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            let v_hat = *v / bc2;
            entry.value.data_mut()[i] -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
        entry.grad.data_mut().fill(0.0);
    }
    Ok(())
}
