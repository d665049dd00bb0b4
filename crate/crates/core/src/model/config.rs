use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{GroupSet, ParamGroup};

/// Where each residual adapter sits relative to its encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdapterPlacement {
    /// After the block's complete output (both residual additions).
    #[default]
    BlockOutput,
    /// Around the feed-forward branch, before the block's second residual add.
    FfnBranch,
}

impl AdapterPlacement {
    pub fn name(self) -> &'static str {
        match self {
            AdapterPlacement::BlockOutput => "block_output",
            AdapterPlacement::FfnBranch => "ffn_branch",
        }
    }
}

impl FromStr for AdapterPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block_output" => Ok(Self::BlockOutput),
            "ffn_branch" => Ok(Self::FfnBranch),
            _ => Err(Error::Config(format!("unknown adapter placement `{s}` (expected block_output or ffn_branch)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Width of the first conv layer.
    pub conv_channels: usize,
    pub causal: bool,
    pub in_dim: usize,
    /// Regression width of each APC head (`subsample · in_dim`).
    pub ssl_out_dim: usize,
    pub subsample: usize,
    pub vocab_size: Option<usize>,
    pub adapter_placement: AdapterPlacement,
}

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;
pub const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    /// Full-size configuration; used for parameter accounting only.
    pub fn paper() -> Self {
        Self {
            d_model: 512,
            n_layers: 12,
            n_heads: 8,
            d_ff: 2048,
            conv_channels: 256,
            causal: true,
            in_dim: 80,
            ssl_out_dim: 320,
            subsample: 4,
            vocab_size: None,
            adapter_placement: AdapterPlacement::BlockOutput,
        }
    }

    /// Small configuration that trains in seconds on a CPU.
    pub fn desk() -> Self {
        Self { d_model: 64, n_layers: 4, n_heads: 4, d_ff: 256, conv_channels: 64, ..Self::paper() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown model preset `{name}` (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("conv_channels", self.conv_channels),
            ("in_dim", self.in_dim),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model = {} is not divisible by n_heads = {}", self.d_model, self.n_heads)));
        }
        if self.subsample != CONV_STRIDE * CONV_STRIDE {
            return Err(Error::Config(format!("subsample must be {} (two stride-{CONV_STRIDE} conv layers)", CONV_STRIDE * CONV_STRIDE)));
        }
        if self.ssl_out_dim != self.subsample * self.in_dim {
            return Err(Error::Config(format!("ssl_out_dim must equal subsample·in_dim = {}", self.subsample * self.in_dim)));
        }
        Ok(())
    }

    pub fn n_adapters(&self) -> usize {
        self.n_layers + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Smallest input length the front-end accepts.
    pub fn min_frames(&self) -> usize {
        // One output step reads 4·0 + 6 + 1 raw frames.
        CONV_KERNEL + CONV_STRIDE * (CONV_KERNEL - 1)
    }

    /// Output length of the front-end for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> Result<usize> {
        let step = |t: usize| -> Result<usize> {
            if t < CONV_KERNEL {
                return Err(Error::SequenceTooShort { len: frames, min: self.min_frames() });
            }
            Ok((t - CONV_KERNEL) / CONV_STRIDE + 1)
        };
        step(step(frames)?)
    }

    /// Last raw frame visible to front-end output step `u`.
    pub fn receptive_end(&self, u: usize) -> usize {
        self.subsample * u + self.min_frames() - 1
    }
}

/// Self-supervised or ASR head attached to the encoder output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadKind {
    /// One `d_model → ssl_out_dim` regression layer per shift.
    Apc { shifts: Vec<usize> },
    /// Projection to `k` pseudo-label classes plus a learned mask embedding.
    MaskedPredict { k: usize },
    /// Context and target projections of width `dim` plus a mask embedding.
    Contrastive { dim: usize },
    /// `d_model → vocab` linear layer.
    Asr { vocab: usize },
}

impl HeadKind {
    pub fn group(&self) -> ParamGroup {
        match self {
            HeadKind::Asr { .. } => ParamGroup::AsrHead,
            _ => ParamGroup::SslHead,
        }
    }

    pub fn is_ssl(&self) -> bool {
        !matches!(self, HeadKind::Asr { .. })
    }

    pub fn uses_mask(&self) -> bool {
        matches!(self, HeadKind::MaskedPredict { .. } | HeadKind::Contrastive { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Apc { .. } => "apc",
            HeadKind::MaskedPredict { .. } => "masked_predict",
            HeadKind::Contrastive { .. } => "contrastive",
            HeadKind::Asr { .. } => "asr",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HeadKind::Apc { shifts } => {
                if shifts.is_empty() || shifts.contains(&0) {
                    return Err(Error::Config("APC shifts must be a non-empty list of positive integers".into()));
                }
                let mut s = shifts.clone();
                s.sort_unstable();
                s.dedup();
                if s.len() != shifts.len() {
                    return Err(Error::Config(format!("APC shifts must be distinct, got {shifts:?}")));
                }
            }
            HeadKind::MaskedPredict { k } if *k < 2 => return Err(Error::Config(format!("cluster count k must be at least 2, got {k}"))),
            HeadKind::Contrastive { dim } if *dim == 0 => {
                return Err(Error::Config("contrastive projection width must be positive".into()))
            }
            HeadKind::Asr { vocab } if *vocab < 2 => {
                return Err(Error::Config(format!("ASR vocabulary must include blank plus one token, got {vocab}")))
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Apc { shifts } => write!(f, "apc{shifts:?}"),
            HeadKind::MaskedPredict { k } => write!(f, "masked_predict(k={k})"),
            HeadKind::Contrastive { dim } => write!(f, "contrastive(dim={dim})"),
            HeadKind::Asr { vocab } => write!(f, "asr(vocab={vocab})"),
        }
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
}

/// Name, shape, group and initializer of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter layout without allocating any storage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout(pub Vec<ParamSpec>);

impl Layout {
    fn push(&mut self, name: String, shape: &[usize], group: ParamGroup, init: Init) {
        self.0.push(ParamSpec { name, shape: shape.to_vec(), group, init });
    }

    #[allow(clippy::too_many_arguments)]
    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize, group: ParamGroup, zero: bool) {
        let init = if zero { Init::Zeros } else { Init::Xavier { fan_in, fan_out } };
        self.push(format!("{prefix}.{w}"), &[fan_in, fan_out], group, init);
        self.push(format!("{prefix}.{b}"), &[fan_out], group, Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, d: usize, group: ParamGroup) {
        self.push(format!("{prefix}.gain"), &[d], group, Init::Ones);
        self.push(format!("{prefix}.bias"), &[d], group, Init::Zeros);
    }

    pub fn count(&self, groups: GroupSet) -> usize {
        self.0.iter().filter(|p| groups.contains(p.group)).map(ParamSpec::numel).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|p| p.name.as_str())
    }

    pub fn extend(&mut self, other: Layout) {
        self.0.extend(other.0);
    }

    pub fn backbone(cfg: &ModelConfig) -> Self {
        let (d, c1, k) = (cfg.d_model, cfg.conv_channels, CONV_KERNEL);
        let bb = ParamGroup::Backbone;
        let mut l = Layout::default();
        for (name, cin, cout) in [("frontend.conv1", cfg.in_dim, c1), ("frontend.conv2", c1, d)] {
            l.push(format!("{name}.kernel"), &[k, cin, cout], bb, Init::Xavier { fan_in: k * cin, fan_out: cout });
            l.push(format!("{name}.bias"), &[cout], bb, Init::Zeros);
        }
        l.linear("frontend.proj", "weight", "bias", d, d, bb, false);
        for i in 0..cfg.n_layers {
            let p = block_prefix(i);
            l.norm(&format!("{p}.ln1"), d, bb);
            for w in ["q", "k", "v", "o"] {
                l.linear(&format!("{p}.attn"), &format!("w{w}"), &format!("b{w}"), d, d, bb, false);
            }
            l.norm(&format!("{p}.ln2"), d, bb);
            let f = format!("{p}.ffn");
            l.linear(&f, "w1", "b1", d, cfg.d_ff, bb, false);
            l.linear(&f, "w2", "b2", cfg.d_ff, d, bb, false);
        }
        l.norm("encoder.final_ln", d, bb);
        l
    }

    pub fn adapters(cfg: &ModelConfig, d_ada: usize) -> Self {
        let d = cfg.d_model;
        let g = ParamGroup::Adapter;
        let mut l = Layout::default();
        for i in 0..cfg.n_adapters() {
            let p = adapter_prefix(i);
            l.norm(&format!("{p}.ln"), d, g);
            l.linear(&p, "w1", "b1", d, d_ada, g, false);
            // Zero second layer: the inserted branch starts as an exact identity.
            l.linear(&p, "w2", "b2", d_ada, d, g, true);
        }
        l
    }

    pub fn head(cfg: &ModelConfig, head: &HeadKind) -> Self {
        let d = cfg.d_model;
        let g = head.group();
        let mut l = Layout::default();
        match head {
            HeadKind::Apc { shifts } => {
                for n in shifts {
                    l.linear(&format!("ssl.apc.shift{n}"), "weight", "bias", d, cfg.ssl_out_dim, g, false);
                }
            }
            HeadKind::MaskedPredict { k } => {
                l.linear("ssl.mp", "weight", "bias", d, *k, g, false);
                l.push(MASK_EMB.into(), &[d], g, Init::Xavier { fan_in: d, fan_out: 1 });
            }
            HeadKind::Contrastive { dim } => {
                l.linear("ssl.ctx", "weight", "bias", d, *dim, g, false);
                l.linear("ssl.tgt", "weight", "bias", d, *dim, g, false);
                l.push(MASK_EMB.into(), &[d], g, Init::Xavier { fan_in: d, fan_out: 1 });
            }
            HeadKind::Asr { vocab } => l.linear("asr", "weight", "bias", d, *vocab, g, false),
        }
        l
    }
}

pub const MASK_EMB: &str = "ssl.mask_emb";

pub fn block_prefix(i: usize) -> String {
    format!("encoder.block{i:02}")
}

pub fn adapter_prefix(i: usize) -> String {
    format!("adapter{i:02}")
}

/// Closed-form parameter count of one adapter.
pub fn adapter_param_count(d_model: usize, d_ada: usize) -> usize {
    2 * d_model + (d_model * d_ada + d_ada) + (d_ada * d_model + d_model)
}
