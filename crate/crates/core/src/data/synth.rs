//! Synthetic speech-like corpora with a controllable domain shift.
//!
//! Each symbol renders as a run of log-mel-like frames: a Gaussian spectral
//! bump at the symbol's center bin, a linear spectral tilt across bins, and
//! white noise. Two domains differing in centers, bandwidths, tilts, symbol
//! frequencies and durations stand in for a source/target corpus pair.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::corpus::Utterance;
use super::features::N_MELS;
use super::Tokenizer;

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTemplate {
    pub symbol: char,
    /// Relative sampling weight of the symbol.
    pub weight: f64,
    /// Center of the spectral bump, in mel bins.
    pub center: f64,
    pub bandwidth: f64,
    /// Level difference between the top and bottom bin.
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomainSpec {
    pub domain_id: String,
    pub templates: Vec<SymbolTemplate>,
    pub amplitude: f64,
    pub noise: f64,
    pub min_symbols: usize,
    pub max_symbols: usize,
    /// Frames per symbol.
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
}

const SYMBOLS: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];

impl SyntheticDomainSpec {
    /// Bundled source domain ("adult"): evenly spread narrow bumps, flat tilt.
    pub fn bundled_source(seed: u64) -> Self {
        let templates = SYMBOLS
            .iter()
            .enumerate()
            .map(|(i, s)| SymbolTemplate { symbol: *s, weight: 1.0, center: 8.0 + 8.5 * i as f64, bandwidth: 3.0, tilt: 0.0 })
            .collect();
        Self {
            domain_id: "source".into(),
            templates,
            amplitude: 2.0,
            noise: 0.35,
            min_symbols: 3,
            max_symbols: 6,
            min_frames: 8,
            max_frames: 14,
            seed,
        }
    }

    /// Bundled target domain ("child"): bumps shifted upward and widened,
    /// per-symbol tilt, skewed symbol distribution, slower symbols.
    pub fn bundled_target(seed: u64) -> Self {
        let templates = SYMBOLS
            .iter()
            .enumerate()
            .map(|(i, s)| SymbolTemplate {
                symbol: *s,
                weight: 1.0 + (i % 3) as f64,
                center: 13.0 + 8.5 * i as f64,
                bandwidth: 4.0,
                tilt: -1.5 + 0.25 * (i % 4) as f64,
            })
            .collect();
        Self {
            domain_id: "target".into(),
            templates,
            amplitude: 2.0,
            noise: 0.35,
            min_symbols: 3,
            max_symbols: 6,
            min_frames: 10,
            max_frames: 16,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Config(format!("synthetic domain {} has an empty vocabulary", self.domain_id)));
        }
        if self.templates.iter().any(|t| !(t.weight > 0.0) || !(t.bandwidth > 0.0)) {
            return Err(Error::Config("symbol weights and bandwidths must be positive".into()));
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return Err(Error::Config("need 1 <= min_symbols <= max_symbols".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config("need 1 <= min_frames <= max_frames".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Whether two specs differ in any distributional parameter (seed excluded).
    pub fn differs_from(&self, other: &Self) -> bool {
        let a = Self { seed: 0, domain_id: String::new(), ..self.clone() };
        let b = Self { seed: 0, domain_id: String::new(), ..other.clone() };
        a != b
    }

    pub fn transcript_alphabet(&self) -> String {
        self.templates.iter().map(|t| t.symbol).collect()
    }

    fn render_frame(&self, t: &SymbolTemplate, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
        for bin in 0..N_MELS {
            let x = bin as f64;
            let bump = self.amplitude * (-(x - t.center).powi(2) / (2.0 * t.bandwidth * t.bandwidth)).exp();
            let tilt = t.tilt * (x / (N_MELS - 1) as f64 - 0.5);
            let noise: f64 = if self.noise > 0.0 { self.noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            out.push((bump + tilt + noise) as f32);
        }
    }

    /// Sidecar text form: `key = value` lines, one `symbol` line per template.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "domain_id = {}", self.domain_id);
        let _ = writeln!(s, "amplitude = {}", self.amplitude);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "min_symbols = {}", self.min_symbols);
        let _ = writeln!(s, "max_symbols = {}", self.max_symbols);
        let _ = writeln!(s, "min_frames = {}", self.min_frames);
        let _ = writeln!(s, "max_frames = {}", self.max_frames);
        let _ = writeln!(s, "seed = {}", self.seed);
        for t in &self.templates {
            let _ = writeln!(s, "symbol = {},{},{},{},{}", t.symbol, t.weight, t.center, t.bandwidth, t.tilt);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self {
            domain_id: String::new(),
            templates: Vec::new(),
            amplitude: 2.0,
            noise: 0.0,
            min_symbols: 1,
            max_symbols: 1,
            min_frames: 1,
            max_frames: 1,
            seed: 0,
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |what: &str| Error::Config(format!("line {}: invalid {what} {v:?}", n + 1));
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(k));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(k));
            match k {
                "domain_id" => spec.domain_id = v.to_string(),
                "amplitude" => spec.amplitude = num(v)?,
                "noise" => spec.noise = num(v)?,
                "min_symbols" => spec.min_symbols = int(v)?,
                "max_symbols" => spec.max_symbols = int(v)?,
                "min_frames" => spec.min_frames = int(v)?,
                "max_frames" => spec.max_frames = int(v)?,
                "seed" => spec.seed = v.parse().map_err(|_| bad("seed"))?,
                "symbol" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    let mut chars = parts.first().map(|p| p.chars()).ok_or_else(|| bad("symbol"))?;
                    let (Some(symbol), None, 5) = (chars.next(), chars.next(), parts.len()) else {
                        return Err(bad("symbol"));
                    };
                    spec.templates.push(SymbolTemplate {
                        symbol,
                        weight: num(parts[1])?,
                        center: num(parts[2])?,
                        bandwidth: num(parts[3])?,
                        tilt: num(parts[4])?,
                    });
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Renders `n_utts` utterances; identical specs yield bit-identical corpora.
pub fn synth_generate(spec: &SyntheticDomainSpec, n_utts: usize, tokenizer: &Tokenizer) -> Result<Vec<Utterance>> {
    spec.validate()?;
    if n_utts == 0 {
        return Err(Error::Config("n_utts must be at least 1".into()));
    }
    let weights = WeightedIndex::new(spec.templates.iter().map(|t| t.weight)).map_err(|e| Error::Config(format!("symbol weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let n_sym = rng.random_range(spec.min_symbols..=spec.max_symbols);
        let mut text = String::with_capacity(n_sym);
        let mut data = Vec::new();
        for _ in 0..n_sym {
            let t = &spec.templates[weights.sample(&mut rng)];
            text.push(t.symbol);
            let frames = rng.random_range(spec.min_frames..=spec.max_frames);
            for _ in 0..frames {
                spec.render_frame(t, &mut rng, &mut data);
            }
        }
        let frames = data.len() / N_MELS;
        out.push(Utterance {
            id: format!("{}-{:05}", spec.domain_id, i),
            features: Tensor::new(vec![frames, N_MELS], data)?,
            transcript: tokenizer.tokenize(&text)?,
        });
    }
    Ok(out)
}
