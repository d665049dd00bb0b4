//! Log-mel filterbank features.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const N_MELS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Window length in seconds.
    pub window: f64,
    /// Hop length in seconds.
    pub hop: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub mel_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, window: 0.025, hop: 0.010, n_fft: 512, n_mels: N_MELS, mel_floor: 1e-10 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop > 0.0 && self.window >= self.hop) {
            return Err(Error::Config(format!("need window >= hop > 0 (window {}, hop {})", self.window, self.hop)));
        }
        if self.win_samples() > self.n_fft {
            return Err(Error::Config(format!("window of {} samples exceeds n_fft {}", self.win_samples(), self.n_fft)));
        }
        if self.n_mels == 0 || self.mel_floor <= 0.0 || self.sample_rate == 0 {
            return Err(Error::Config("n_mels, mel_floor and sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn win_samples(&self) -> usize {
        (self.window * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop * self.sample_rate as f64).round() as usize
    }

    /// Frames produced for `n` samples, or `None` if `n` is shorter than a window.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        let win = self.win_samples();
        (n >= win).then(|| 1 + (n - win) / self.hop_samples())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters over `[0, sr/2]`, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Center frequency of mel band `m` in Hz.
pub fn mel_band_center(cfg: &FeatureConfig, m: usize) -> f64 {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    mel_to_hz(top * (m + 1) as f64 / (cfg.n_mels + 1) as f64)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable extractor holding the FFT plan, window and filterbank.
pub struct LogMel {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
}

impl LogMel {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self { window: hann(cfg.win_samples()), filters: mel_filterbank(&cfg), fft, cfg })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Power spectrum of one windowed, zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        for (i, (s, w)) in frame.iter().zip(&self.window).enumerate() {
            buf[i] = Complex::new(*s as f64 * w, 0.0);
        }
        self.fft.process(&mut buf);
        buf[..self.cfg.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// `log(mel_floor + filterbank · power)` for one power spectrum.
    pub fn mel_frame(&self, power: &[f64]) -> Vec<f32> {
        self.filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(power).map(|(w, p)| w * p).sum();
                (self.cfg.mel_floor + e).ln() as f32
            })
            .collect()
    }

    pub fn extract(&self, samples: &[f32]) -> Result<Tensor<f32>> {
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        let frames = self.cfg.frame_count(samples.len()).ok_or(Error::SequenceTooShort { len: samples.len(), min: win })?;
        let mut data = Vec::with_capacity(frames * self.cfg.n_mels);
        for t in 0..frames {
            let p = self.power_spectrum(&samples[t * hop..t * hop + win]);
            data.extend(self.mel_frame(&p));
        }
        Tensor::new(vec![frames, self.cfg.n_mels], data)
    }
}

/// One-shot log-mel extraction.
pub fn log_mel(samples: &[f32], cfg: &FeatureConfig) -> Result<Tensor<f32>> {
    LogMel::new(cfg.clone())?.extract(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_gives_log_floor_everywhere() {
        let cfg = FeatureConfig::default();
        let f = log_mel(&vec![0.0; 4000], &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(f.data().iter().all(|v| *v == floor));
    }

    #[test]
    fn frame_count_formula() {
        let cfg = FeatureConfig::default();
        let f = log_mel(&vec![0.01; 400 + 160 * 9], &cfg).unwrap();
        assert_eq!(f.shape(), &[10, 80]);
        assert!(matches!(log_mel(&[0.0; 399], &cfg), Err(Error::SequenceTooShort { len: 399, min: 400 })));
    }

    #[test]
    fn filterbank_triangles_peak_at_centers() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.len(), 80);
        assert!(fb.iter().all(|f| f.len() == 257 && f.iter().all(|w| (0.0..=1.0).contains(w))));
    }
}
