//! Conv front-end, transformer encoder, residual adapters and swappable heads.
//!
//! Forward passes take the [`ParamStore`] separately from the [`Architecture`]
//! so the same code serves training, evaluation and finite-difference checks.

mod config;

pub use config::{
    adapter_param_count, adapter_prefix, block_prefix, AdapterPlacement, HeadKind, Init, Layout, ModelConfig, ParamSpec, CONV_KERNEL,
    CONV_STRIDE, LN_EPS, MASK_EMB,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, GroupSet, ParamGroup, ParamStore, Scalar, Tensor, Var};

/// Mixes a label into a seed so independent parameter blocks draw from
/// independent streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn init_into<F: Scalar>(store: &mut ParamStore<F>, layout: &Layout, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &layout.0 {
        let n = p.numel();
        let data: Vec<F> = match p.init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| F::lit(rng.random_range(-a..a))).collect()
            }
        };
        store.insert(p.name.clone(), Tensor::new(p.shape.clone(), data)?, p.group)?;
    }
    Ok(())
}

/// Structural description of a model: everything but the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub head: HeadKind,
    /// Adapter bottleneck width when adapters are present.
    pub d_ada: Option<usize>,
}

/// Encoder outputs for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Front-end output before masking (`T″×d_model`).
    pub frontend: Var,
    /// Final encoder output (`T″×d_model`).
    pub hidden: Var,
}

impl Architecture {
    pub fn layout(&self) -> Layout {
        let mut l = Layout::backbone(&self.config);
        if let Some(d) = self.d_ada {
            l.extend(Layout::adapters(&self.config, d));
        }
        l.extend(Layout::head(&self.config, &self.head));
        l
    }

    /// Verifies that `store` holds exactly this architecture's parameters
    /// with matching shapes and groups.
    pub fn check_store<F: Scalar>(&self, store: &ParamStore<F>) -> Result<()> {
        let layout = self.layout();
        let missing: Vec<String> = layout.0.iter().filter(|p| !store.contains(&p.name)).map(|p| p.name.clone()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingGroup { names: missing });
        }
        for p in &layout.0 {
            let e = store.get(&p.name).expect("checked above");
            if e.tensor.shape() != p.shape.as_slice() || e.group != p.group {
                return Err(Error::CheckpointContent(format!(
                    "{}: expected {:?} in {}, found {:?} in {}",
                    p.name,
                    p.shape,
                    p.group,
                    e.tensor.shape(),
                    e.group
                )));
            }
        }
        if store.len() != layout.0.len() {
            let extra: Vec<&str> = store.names().filter(|n| !layout.names().any(|m| m == *n)).collect();
            return Err(Error::CheckpointContent(format!("unexpected parameters: {}", extra.join(", "))));
        }
        Ok(())
    }

    /// Recovers the head and adapter width from parameter names and shapes.
    pub fn infer<F: Scalar>(config: &ModelConfig, store: &ParamStore<F>) -> Result<Self> {
        let mut shifts: Vec<usize> =
            store.names().filter_map(|n| n.strip_prefix("ssl.apc.shift")?.strip_suffix(".weight")?.parse().ok()).collect();
        shifts.sort_unstable();
        let head = if !shifts.is_empty() {
            HeadKind::Apc { shifts }
        } else if let Some(e) = store.get("ssl.mp.weight") {
            HeadKind::MaskedPredict { k: e.tensor.last_dim() }
        } else if let Some(e) = store.get("ssl.ctx.weight") {
            HeadKind::Contrastive { dim: e.tensor.last_dim() }
        } else if let Some(e) = store.get("asr.weight") {
            HeadKind::Asr { vocab: e.tensor.last_dim() }
        } else {
            return Err(Error::CheckpointContent("no recognizable head parameters".into()));
        };
        let d_ada = store.get(&format!("{}.w1", adapter_prefix(0))).map(|e| e.tensor.last_dim());
        if let Some(e) = store.get("frontend.proj.weight") {
            if e.tensor.last_dim() != config.d_model {
                return Err(Error::CheckpointContent(format!(
                    "d_model mismatch: checkpoint has {}, config expects {}",
                    e.tensor.last_dim(),
                    config.d_model
                )));
            }
        }
        let arch = Self { config: config.clone(), head, d_ada };
        arch.check_store(store)?;
        Ok(arch)
    }

    /// Two stride-2 convolutions with ReLU, then a linear projection.
    pub fn frontend<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, x: Var) -> Result<Var> {
        let frames = g.shape(x)[0];
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.config.in_dim {
            return Err(Error::Dimension { op: "frontend", lhs: g.shape(x).to_vec(), rhs: vec![self.config.in_dim] });
        }
        if frames < self.config.min_frames() {
            return Err(Error::SequenceTooShort { len: frames, min: self.config.min_frames() });
        }
        let mut h = x;
        for name in ["frontend.conv1", "frontend.conv2"] {
            let k = g.param(s, &format!("{name}.kernel"))?;
            let b = g.param(s, &format!("{name}.bias"))?;
            h = g.conv1d(h, k, b, CONV_STRIDE)?;
            h = g.relu(h)?;
        }
        let w = g.param(s, "frontend.proj.weight")?;
        let b = g.param(s, "frontend.proj.bias")?;
        g.linear(h, w, b)
    }

    /// `x + W2·ReLU(W1·LN(x) + b1) + b2` for adapter `i`.
    pub fn adapter<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, i: usize, x: Var) -> Result<Var> {
        adapter_forward(g, s, &adapter_prefix(i), x)
    }

    fn maybe_adapter<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, i: usize, x: Var) -> Result<Var> {
        if self.d_ada.is_some() {
            self.adapter(g, s, i, x)
        } else {
            Ok(x)
        }
    }

    /// Attention mask for `t` steps of which the first `valid` are real.
    pub fn attention_mask(&self, t: usize, valid: usize) -> Vec<bool> {
        let mut m = vec![false; t * t];
        for i in 0..t {
            for j in 0..valid.min(t) {
                m[i * t + j] = !self.config.causal || j <= i;
            }
        }
        m
    }

    fn attention<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, p: &str, x: Var, mask: &[bool]) -> Result<Var> {
        let lin = |g: &mut Graph<F>, w: &str, x: Var| -> Result<Var> {
            let wv = g.param(s, &format!("{p}.attn.w{w}"))?;
            let bv = g.param(s, &format!("{p}.attn.b{w}"))?;
            g.linear(x, wv, bv)
        };
        let q = lin(g, "q", x)?;
        let k = lin(g, "k", x)?;
        let v = lin(g, "v", x)?;
        let dh = self.config.head_dim();
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = g.cols(q, h * dh, dh)?;
            let kh = g.cols(k, h * dh, dh)?;
            let vh = g.cols(v, h * dh, dh)?;
            let sc = g.matmul_bt(qh, kh)?;
            let sc = g.scale(sc, scale)?;
            let pr = g.masked_softmax(sc, mask)?;
            heads.push(g.matmul(pr, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        lin(g, "o", cat)
    }

    fn layer_norm<F: Scalar>(g: &mut Graph<F>, s: &ParamStore<F>, p: &str, x: Var) -> Result<Var> {
        let gain = g.param(s, &format!("{p}.gain"))?;
        let bias = g.param(s, &format!("{p}.bias"))?;
        g.layer_norm(x, gain, bias, F::lit(LN_EPS))
    }

    /// Pre-LN block: `h = x + Attn(LN(x))`, `y = h + FFN(LN(h))`.
    fn block<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, i: usize, x: Var, mask: &[bool]) -> Result<Var> {
        let p = block_prefix(i);
        let n1 = Self::layer_norm(g, s, &format!("{p}.ln1"), x)?;
        let a = self.attention(g, s, &p, n1, mask)?;
        let h = g.add(x, a)?;
        let n2 = Self::layer_norm(g, s, &format!("{p}.ln2"), h)?;
        let w1 = g.param(s, &format!("{p}.ffn.w1"))?;
        let b1 = g.param(s, &format!("{p}.ffn.b1"))?;
        let w2 = g.param(s, &format!("{p}.ffn.w2"))?;
        let b2 = g.param(s, &format!("{p}.ffn.b2"))?;
        let f = g.linear(n2, w1, b1)?;
        let f = g.relu(f)?;
        let mut f = g.linear(f, w2, b2)?;
        let ffn_adapter = self.config.adapter_placement == AdapterPlacement::FfnBranch;
        if ffn_adapter {
            f = self.maybe_adapter(g, s, i + 1, f)?;
        }
        let y = g.add(h, f)?;
        if ffn_adapter {
            Ok(y)
        } else {
            self.maybe_adapter(g, s, i + 1, y)
        }
    }

    /// Positional encoding, blocks (each followed by its adapter) and the
    /// final LayerNorm. Keys at steps `>= valid` are masked out.
    pub fn encoder<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, x: Var, valid: usize) -> Result<Var> {
        let t = g.shape(x)[0];
        let pe = g.input(sinusoidal(t, self.config.d_model));
        let mut h = g.add(x, pe)?;
        let mask = self.attention_mask(t, valid);
        for i in 0..self.config.n_layers {
            h = self.block(g, s, i, h, &mask)?;
        }
        Self::layer_norm(g, s, "encoder.final_ln", h)
    }

    /// Full encoder pass on one utterance (`T×in_dim`). `mask` flags
    /// front-end steps to replace by the learned mask embedding.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, x: Var, mask: Option<&[bool]>) -> Result<Encoded> {
        let frontend = self.frontend(g, s, x)?;
        let steps = g.shape(frontend)[0];
        let mut h = frontend;
        if let Some(m) = mask {
            if !self.head.uses_mask() {
                return Err(Error::Config(format!("head {} has no mask embedding", self.head)));
            }
            let emb = g.param(s, MASK_EMB)?;
            h = g.replace_rows(h, emb, m)?;
        }
        h = self.maybe_adapter(g, s, 0, h)?;
        let hidden = self.encoder(g, s, h, steps)?;
        Ok(Encoded { frontend, hidden })
    }

    fn head_linear<F: Scalar>(g: &mut Graph<F>, s: &ParamStore<F>, p: &str, x: Var) -> Result<Var> {
        let w = g.param(s, &format!("{p}.weight"))?;
        let b = g.param(s, &format!("{p}.bias"))?;
        g.linear(x, w, b)
    }

    /// One `T″×ssl_out_dim` prediction per APC shift.
    pub fn apc_predictions<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, hidden: Var) -> Result<Vec<Var>> {
        let HeadKind::Apc { shifts } = &self.head else {
            return Err(self.head_mismatch("apc"));
        };
        shifts.iter().map(|n| Self::head_linear(g, s, &format!("ssl.apc.shift{n}"), hidden)).collect()
    }

    /// `T″×k` pseudo-label logits.
    pub fn cluster_logits<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, hidden: Var) -> Result<Var> {
        if !matches!(self.head, HeadKind::MaskedPredict { .. }) {
            return Err(self.head_mismatch("masked_predict"));
        }
        Self::head_linear(g, s, "ssl.mp", hidden)
    }

    /// Context projections of the encoder output and projections of the
    /// detached front-end targets.
    pub fn contrastive_pair<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, enc: &Encoded) -> Result<(Var, Var)> {
        if !matches!(self.head, HeadKind::Contrastive { .. }) {
            return Err(self.head_mismatch("contrastive"));
        }
        let ctx = Self::head_linear(g, s, "ssl.ctx", enc.hidden)?;
        let tgt = g.detach(enc.frontend);
        let tgt = Self::head_linear(g, s, "ssl.tgt", tgt)?;
        Ok((ctx, tgt))
    }

    /// `T″×vocab` log-probabilities.
    pub fn asr_log_probs<F: Scalar>(&self, g: &mut Graph<F>, s: &ParamStore<F>, hidden: Var) -> Result<Var> {
        if !matches!(self.head, HeadKind::Asr { .. }) {
            return Err(self.head_mismatch("asr"));
        }
        let z = Self::head_linear(g, s, "asr", hidden)?;
        g.log_softmax(z)
    }

    fn head_mismatch(&self, wanted: &str) -> Error {
        Error::Config(format!("objective needs a {wanted} head but the model has {}", self.head))
    }
}

/// `x + W2·ReLU(W1·LN(x) + b1) + b2` with parameters under `prefix`.
pub fn adapter_forward<F: Scalar>(g: &mut Graph<F>, s: &ParamStore<F>, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(s, &format!("{prefix}.ln.gain"))?;
    let bias = g.param(s, &format!("{prefix}.ln.bias"))?;
    let w1 = g.param(s, &format!("{prefix}.w1"))?;
    let b1 = g.param(s, &format!("{prefix}.b1"))?;
    let w2 = g.param(s, &format!("{prefix}.w2"))?;
    let b2 = g.param(s, &format!("{prefix}.b2"))?;
    let d = g.value(x).last_dim();
    if g.shape(w1)[0] != d {
        return Err(Error::Dimension { op: "adapter", lhs: g.shape(x).to_vec(), rhs: g.shape(w1).to_vec() });
    }
    let n = g.layer_norm(x, gain, bias, F::lit(LN_EPS))?;
    let h = g.linear(n, w1, b1)?;
    let h = g.relu(h)?;
    let y = g.linear(h, w2, b2)?;
    g.add(x, y)
}

/// Fixed sinusoidal position table `T×d`.
pub fn sinusoidal<F: Scalar>(t: usize, d: usize) -> Tensor<F> {
    let mut data = vec![F::zero(); t * d];
    for pos in 0..t {
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            data[pos * d + i] = F::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![t, d], data).expect("sinusoidal shape")
}

/// Architecture plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel<F: Scalar = f32> {
    pub arch: Architecture,
    pub store: ParamStore<F>,
    /// Number of training stages that updated each group, indexed by tag.
    pub counters: [u32; 4],
}

impl<F: Scalar> AcousticModel<F> {
    /// Fresh model without adapters.
    pub fn new(config: ModelConfig, head: HeadKind, seed: u64) -> Result<Self> {
        config.validate()?;
        head.validate()?;
        let arch = Architecture { config, head, d_ada: None };
        let mut store = ParamStore::new();
        init_into(&mut store, &Layout::backbone(&arch.config), derive_seed(seed, "backbone"))?;
        init_into(&mut store, &Layout::head(&arch.config, &arch.head), derive_seed(seed, "head"))?;
        Ok(Self { arch, store, counters: [0; 4] })
    }

    pub fn from_parts(arch: Architecture, store: ParamStore<F>) -> Result<Self> {
        arch.check_store(&store)?;
        Ok(Self { arch, store, counters: [0; 4] })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn head(&self) -> &HeadKind {
        &self.arch.head
    }

    pub fn has_adapters(&self) -> bool {
        self.arch.d_ada.is_some()
    }

    /// Inserts `n_layers + 1` adapters whose residual branch is zero, so the
    /// model computes exactly the same function as before.
    pub fn insert_adapters(&mut self, d_ada: usize, seed: u64) -> Result<()> {
        if let Some(d) = self.arch.d_ada {
            return Err(Error::State(format!("adapters (d_ada = {d}) are already present")));
        }
        if d_ada == 0 {
            return Err(Error::Config("d_ada must be positive".into()));
        }
        init_into(&mut self.store, &Layout::adapters(&self.arch.config, d_ada), derive_seed(seed, "adapters"))?;
        self.arch.d_ada = Some(d_ada);
        Ok(())
    }

    /// Drops every adapter tensor.
    pub fn remove_adapters(&mut self) -> Result<()> {
        if self.arch.d_ada.take().is_none() {
            return Err(Error::State("model has no adapters".into()));
        }
        self.store.remove_group(ParamGroup::Adapter);
        Ok(())
    }

    /// Replaces the head with a freshly initialized one. `vocab_size` is
    /// required for an ASR head unless the config already names one.
    pub fn swap_head(&mut self, kind: HeadKind, seed: u64) -> Result<()> {
        kind.validate()?;
        let old = self.arch.head.group();
        self.store.remove_group(old);
        if let HeadKind::Asr { vocab } = kind {
            self.arch.config.vocab_size = Some(vocab);
        }
        init_into(&mut self.store, &Layout::head(&self.arch.config, &kind), derive_seed(seed, "head"))?;
        self.arch.head = kind;
        Ok(())
    }

    /// Convenience wrapper resolving the ASR vocabulary from an optional size.
    pub fn swap_to_asr(&mut self, vocab_size: Option<usize>, seed: u64) -> Result<()> {
        let vocab = vocab_size.or(self.arch.config.vocab_size).ok_or_else(|| Error::Config("an ASR head requires vocab_size".into()))?;
        self.swap_head(HeadKind::Asr { vocab }, seed)
    }

    pub fn count_params(&self, groups: GroupSet) -> usize {
        self.store.count(groups)
    }

    /// Encoder output for one utterance without building a training graph
    /// beyond what the forward needs.
    pub fn encode_tensor(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let enc = self.arch.encode(&mut g, &self.store, x, None)?;
        Ok(g.value(enc.hidden).clone())
    }

    /// ASR log-probabilities for one utterance (`T″×vocab`).
    pub fn log_probs(&self, features: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let x = g.input(features.clone());
        let enc = self.arch.encode(&mut g, &self.store, x, None)?;
        let lp = self.arch.asr_log_probs(&mut g, &self.store, enc.hidden)?;
        Ok(g.value(lp).clone())
    }
}

/// Parameter count for `groups` of a model that is never materialized.
pub fn count_layout(config: &ModelConfig, head: &HeadKind, d_ada: Option<usize>, groups: GroupSet) -> usize {
    Architecture { config: config.clone(), head: head.clone(), d_ada }.layout().count(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(t: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t, 80], (0..t * 80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn apc() -> HeadKind {
        HeadKind::Apc { shifts: vec![1, 2, 3] }
    }

    #[test]
    fn output_lengths() {
        let c = ModelConfig::desk();
        assert_eq!(c.output_len(16).unwrap(), 3);
        assert_eq!(c.output_len(7).unwrap(), 1);
        assert!(matches!(c.output_len(6), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn paper_counts() {
        let c = ModelConfig::paper();
        let apc4 = HeadKind::Apc { shifts: vec![1, 2, 3, 4] };
        assert_eq!(count_layout(&c, &apc4, None, GroupSet::of(&[ParamGroup::Backbone])), 38_547_712);
        assert_eq!(count_layout(&c, &apc4, None, GroupSet::ALL), 39_204_352);
        assert_eq!(count_layout(&c, &apc4, Some(64), GroupSet::of(&[ParamGroup::Adapter])), 872_768);
        assert_eq!(13 * adapter_param_count(512, 2048), 27_309_568);
    }

    #[test]
    fn insertion_is_identity() {
        let mut m = AcousticModel::<f32>::new(ModelConfig::desk(), apc(), 3).unwrap();
        let x = feats(40, 1);
        let before = m.encode_tensor(&x).unwrap();
        m.insert_adapters(16, 9).unwrap();
        assert_eq!(m.encode_tensor(&x).unwrap(), before);
        assert!(matches!(m.insert_adapters(16, 9), Err(Error::State(_))));
        assert_eq!(m.store.names_in(ParamGroup::Adapter).len(), 5 * 6);
    }

    #[test]
    fn swap_keeps_backbone() {
        let mut m = AcousticModel::<f32>::new(ModelConfig::desk(), apc(), 3).unwrap();
        let bb: Vec<_> = m.store.names_in(ParamGroup::Backbone);
        let snap: Vec<_> = bb.iter().map(|n| m.store.tensor(n).unwrap().clone()).collect();
        m.swap_to_asr(Some(29), 1).unwrap();
        assert_eq!(m.count_params(GroupSet::of(&[ParamGroup::AsrHead])), 64 * 29 + 29);
        assert!(!m.store.has_group(ParamGroup::SslHead));
        m.swap_head(apc(), 2).unwrap();
        for (n, t) in bb.iter().zip(&snap) {
            assert_eq!(m.store.tensor(n).unwrap(), t);
        }
        let mut m2 = AcousticModel::<f32>::new(ModelConfig::desk(), apc(), 3).unwrap();
        assert!(m2.swap_to_asr(None, 0).is_err());
    }

    #[test]
    fn causal_prefix_is_stable() {
        let m = AcousticModel::<f32>::new(ModelConfig::desk(), apc(), 5).unwrap();
        let x = feats(48, 2);
        let a = m.encode_tensor(&x).unwrap();
        let mut y = x.clone();
        // Frame 46 is the last one read by output step 10 (of 11).
        y.data_mut()[46 * 80] += 3.0;
        let b = m.encode_tensor(&y).unwrap();
        let t = a.rows();
        let d = a.last_dim();
        assert_eq!(a.data()[..(t - 1) * d], b.data()[..(t - 1) * d]);
        assert_ne!(a.data()[(t - 1) * d..], b.data()[(t - 1) * d..]);
    }

    #[test]
    fn infer_round_trip() {
        let mut m = AcousticModel::<f32>::new(ModelConfig::desk(), apc(), 5).unwrap();
        m.insert_adapters(8, 1).unwrap();
        let arch = Architecture::infer(&ModelConfig::desk(), &m.store).unwrap();
        assert_eq!(arch, m.arch);
        let mut wide = ModelConfig::desk();
        wide.d_model = 128;
        wide.n_heads = 4;
        assert!(Architecture::infer(&wide, &m.store).is_err());
    }
}
