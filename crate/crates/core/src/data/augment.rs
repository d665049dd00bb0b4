//! SpecAugment masking and frame-rate speed perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecAugmentConfig {
    pub n_time_masks: usize,
    pub max_time_width: usize,
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
}

impl SpecAugmentConfig {
    pub const OFF: SpecAugmentConfig = SpecAugmentConfig { n_time_masks: 0, max_time_width: 0, n_freq_masks: 0, max_freq_width: 0 };
}

/// Masks time and frequency stripes with the utterance mean.
pub fn spec_augment(features: &Tensor<f32>, cfg: &SpecAugmentConfig, seed: u64) -> Tensor<f32> {
    spec_augment_with(features, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn spec_augment_with<R: Rng>(features: &Tensor<f32>, cfg: &SpecAugmentConfig, rng: &mut R) -> Tensor<f32> {
    let mut out = features.clone();
    let (t, d) = (features.rows(), features.last_dim());
    if t == 0 || d == 0 {
        return out;
    }
    let mean = (features.data().iter().map(|v| *v as f64).sum::<f64>() / features.numel() as f64) as f32;
    let data = out.data_mut();
    for _ in 0..cfg.n_time_masks {
        let w = rng.random_range(0..=cfg.max_time_width).min(t);
        let start = rng.random_range(0..=t - w);
        for row in start..start + w {
            data[row * d..(row + 1) * d].iter_mut().for_each(|v| *v = mean);
        }
    }
    for _ in 0..cfg.n_freq_masks {
        let w = rng.random_range(0..=cfg.max_freq_width).min(d);
        let start = rng.random_range(0..=d - w);
        for row in 0..t {
            data[row * d + start..row * d + start + w].iter_mut().for_each(|v| *v = mean);
        }
    }
    out
}

/// Resamples the frame axis by linear interpolation to `round(T / factor)` frames.
pub fn speed_perturb(features: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Config(format!("speed factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(features.clone());
    }
    let (t, d) = (features.rows(), features.last_dim());
    let t_out = ((t as f64 / factor).round() as usize).max(1);
    let src = features.data();
    let mut data = Vec::with_capacity(t_out * d);
    for i in 0..t_out {
        let pos = (i as f64 * factor).min((t - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let w = (pos - lo as f64) as f32;
        for j in 0..d {
            let a = src[lo * d + j];
            let b = src[hi * d + j];
            data.push(a + w * (b - a));
        }
    }
    Tensor::new(vec![t_out, d], data)
}
