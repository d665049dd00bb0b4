use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Per-parameter moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, moments: BTreeMap::new() }
    }
}

impl<F: Scalar> Default for AdamState<F> {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

/// One bias-corrected Adam update over the trainable entries of `store`.
/// Entries with `trainable == false` are not read or written.
pub fn adam_step<F: Scalar>(store: &mut ParamStore<F>, state: &mut AdamState<F>, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (F::lit(beta1), F::lit(beta2));
    let (one_b1, one_b2) = (F::lit(1.0 - beta1), F::lit(1.0 - beta2));
    let (step, c2, e) = (F::lit(lr / bc1), F::lit(1.0 / bc2), F::lit(eps));
    for (name, entry) in store.iter_mut() {
        if !entry.trainable {
            continue;
        }
        let n = entry.tensor.numel();
        let (m, v) = state.moments.entry(name.to_string()).or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
        let Some(grad) = entry.tensor.grad().map(<[F]>::to_vec) else {
            continue;
        };
        let data = entry.tensor.data_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            data[i] = data[i] - step * m[i] / ((v[i] * c2).sqrt() + e);
        }
    }
    Ok(())
}
