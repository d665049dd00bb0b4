//! Experiment configuration: schema, defaults, regime rules and the
//! normalized echo.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use draftlab_core::data::{FeatureConfig, SyntheticDomainSpec};
use draftlab_core::model::{AdapterPlacement, ModelConfig};
use draftlab_core::numerics::{GroupSet, ParamGroup};
use draftlab_core::train::{NoamConfig, ObjectiveKind, Regime, Scheduler, TriStageConfig};

use crate::error::{CliError, Result};
use crate::ini::{self, Entry, Ini, Section};

const STAGE_KEYS: [&str; 10] = ["steps", "batch_size", "schedule", "factor", "warmup", "peak", "hold", "total", "final_ratio", "log_every"];

fn keys_of(section: &str) -> Option<Vec<&'static str>> {
    let stage = |extra: &[&'static str]| {
        let mut k = STAGE_KEYS.to_vec();
        k.extend_from_slice(extra);
        k
    };
    Some(match section {
        "experiment" => vec!["regime", "seed", "out", "d_ada"],
        "model" => vec!["preset", "causal", "adapter_placement"],
        "features" => vec!["sample_rate", "window", "hop", "n_fft", "n_mels", "mel_floor"],
        "objective" => vec!["kind", "shifts", "clusters", "kmeans_iters", "mask_prob", "mask_span", "negatives", "temperature"],
        "source" | "target" | "transfer" => vec!["name", "kind", "domain", "seed", "noise", "train", "dev", "test"],
        "pretrain" => stage(&["augment", "init"]),
        "adapt" => stage(&["augment"]),
        "finetune" => stage(&["augment", "trainable"]),
        _ => return None,
    })
}

const SECTIONS: [&str; 10] =
    ["experiment", "model", "features", "objective", "source", "target", "transfer", "pretrain", "adapt", "finetune"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub preset: String,
    pub causal: bool,
    pub adapter_placement: AdapterPlacement,
}

impl ModelSection {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::preset(&self.preset)?;
        c.causal = self.causal;
        c.adapter_placement = self.adapter_placement;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    pub shifts: Vec<usize>,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub negatives: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn spec(self, seed: u64, noise: f64) -> SyntheticDomainSpec {
        let mut s = match self {
            Domain::Source => SyntheticDomainSpec::bundled_source(seed),
            Domain::Target => SyntheticDomainSpec::bundled_target(seed),
        };
        s.noise = noise;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic {
        domain: Domain,
        seed: u64,
        noise: f64,
        sizes: [usize; 3],
    },
    /// Manifests for train, dev and test; absent splits are empty.
    Manifest {
        splits: [Option<PathBuf>; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSection {
    pub name: String,
    pub source: CorpusSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSection {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: Scheduler,
    pub log_every: u64,
    pub augment: bool,
    /// Finetune only.
    pub trainable: GroupSet,
    /// Pretrain only: start from this checkpoint instead of training.
    pub init: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub seed: u64,
    pub out: PathBuf,
    pub d_ada: Option<usize>,
    pub model: ModelSection,
    pub features: FeatureConfig,
    pub objective: ObjectiveSection,
    pub source: Option<CorpusSection>,
    pub target: CorpusSection,
    pub transfer: Option<CorpusSection>,
    pub pretrain: Option<StageSection>,
    pub adapt: Option<StageSection>,
    pub finetune: StageSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Typed access to one section with line-numbered errors.
struct View<'a> {
    section: Option<&'a Section>,
}

impl<'a> View<'a> {
    fn entry(&self, key: &str) -> Option<&'a Entry> {
        self.section.and_then(|s| s.get(key))
    }

    fn line(&self) -> Option<usize> {
        self.section.map(|s| s.line)
    }

    fn parse<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).ok_or_else(|| CliError::Value {
                line: e.line,
                key: key.to_string(),
                msg: format!("expected {what}, got `{}`", e.value),
            }),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse(key, "a non-negative integer", |v| v.parse().ok())
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse(key, "a non-negative integer", |v| v.parse().ok())
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse(key, "true or false", |v| match v {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        })
    }

    fn str(&self, key: &str) -> Option<&'a str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    fn with<T>(&self, key: &str, f: impl Fn(&str) -> draftlab_core::Result<T>) -> Result<Option<T>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).map_err(|err| CliError::Value { line: e.line, key: key.to_string(), msg: err.to_string() }),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Option<(PathBuf, usize)> {
        self.entry(key).map(|e| (resolve(base, &e.value), e.line))
    }

    fn check(&self, key: &str, ok: bool, msg: &str) -> Result<()> {
        if ok {
            return Ok(());
        }
        Err(CliError::Value {
            line: self.entry(key).map_or_else(|| self.line().unwrap_or(0), |e| e.line),
            key: key.to_string(),
            msg: msg.to_string(),
        })
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_schema(ini: &Ini) -> Result<()> {
    for s in &ini.sections {
        let Some(keys) = keys_of(&s.name) else {
            return Err(CliError::UnknownKey {
                line: s.line,
                what: "section",
                name: s.name.clone(),
                nearest: ini::nearest(&s.name, SECTIONS),
            });
        };
        for e in &s.entries {
            if !keys.contains(&e.key.as_str()) {
                return Err(CliError::UnknownKey {
                    line: e.line,
                    what: "key",
                    name: format!("{}.{}", s.name, e.key),
                    nearest: ini::nearest(&e.key, keys.iter().copied()).map(|k| format!("{}.{k}", s.name)),
                });
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, &base, overrides)
    }

    /// Parses, fills defaults and checks every rule. Relative paths are
    /// resolved against `base`.
    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let base = absolute(base)?;
        let ini = ini::parse(text)?;
        check_schema(&ini)?;
        let view = |name: &str| View { section: ini.section(name) };

        let exp = view("experiment");
        let regime_entry = exp.entry("regime").ok_or_else(|| CliError::rule(exp.line(), "missing required key experiment.regime"))?;
        let regime: Regime = exp.with("regime", |v| v.parse())?.expect("present");
        let regime_line = Some(regime_entry.line);
        let seed = match overrides.seed {
            Some(s) => s,
            None => exp.u64("seed")?.unwrap_or(1),
        };
        let d_ada = exp.usize("d_ada")?;
        if regime.needs_d_ada() && d_ada.is_none() {
            return Err(CliError::rule(regime_line, format!("regime {regime} requires d_ada")));
        }
        if let (false, Some(e)) = (regime.needs_d_ada(), exp.entry("d_ada")) {
            return Err(CliError::rule(Some(e.line), format!("regime {regime} does not use d_ada")));
        }
        exp.check("d_ada", d_ada != Some(0), "d_ada must be at least 1")?;
        let out = match &overrides.out {
            Some(o) => absolute(o)?,
            None => exp.path("out", &base).map(|(p, _)| p).unwrap_or_else(|| base.join("runs").join(format!("{regime}-seed{seed}"))),
        };

        let m = view("model");
        let preset = m.str("preset").unwrap_or("desk").to_string();
        let preset_cfg = m.with("preset", ModelConfig::preset)?.unwrap_or_else(ModelConfig::desk);
        let model = ModelSection {
            causal: m.bool("causal")?.unwrap_or(preset_cfg.causal),
            adapter_placement: m.with("adapter_placement", |v| v.parse())?.unwrap_or(preset_cfg.adapter_placement),
            preset,
        };
        let model_cfg = model.model_config()?;

        let f = view("features");
        let dflt = FeatureConfig::default();
        let features = FeatureConfig {
            sample_rate: f.parse("sample_rate", "a sample rate in Hz", |v| v.parse().ok())?.unwrap_or(dflt.sample_rate),
            window: f.f64("window")?.unwrap_or(dflt.window),
            hop: f.f64("hop")?.unwrap_or(dflt.hop),
            n_fft: f.usize("n_fft")?.unwrap_or(dflt.n_fft),
            n_mels: f.usize("n_mels")?.unwrap_or(dflt.n_mels),
            mel_floor: f.f64("mel_floor")?.unwrap_or(dflt.mel_floor),
        };
        features.validate().map_err(|e| CliError::rule(f.line(), e.to_string()))?;
        f.check("n_mels", features.n_mels == model_cfg.in_dim, &format!("n_mels must equal the model input width {}", model_cfg.in_dim))?;

        let o = view("objective");
        let kind = o.with("kind", |v| v.parse())?.unwrap_or(ObjectiveKind::Apc);
        o.check("kind", kind.is_ssl(), "objective.kind must be self-supervised")?;
        let objective = ObjectiveSection {
            kind,
            shifts: o.parse("shifts", "a comma-separated list of positive integers", parse_list)?.unwrap_or_else(|| vec![1, 2, 3]),
            clusters: o.usize("clusters")?.unwrap_or(16),
            kmeans_iters: o.usize("kmeans_iters")?.unwrap_or(20),
            mask_prob: o.f64("mask_prob")?.unwrap_or(0.065),
            mask_span: o.usize("mask_span")?.unwrap_or(10),
            negatives: o.usize("negatives")?.unwrap_or(10),
            temperature: o.f64("temperature")?.unwrap_or(0.1),
        };
        o.check("shifts", objective.shifts.iter().all(|s| *s > 0), "shifts must be positive")?;
        o.check("clusters", objective.clusters >= 2, "need at least 2 clusters")?;
        o.check("mask_prob", objective.mask_prob > 0.0 && objective.mask_prob < 1.0, "mask_prob must lie in (0, 1)")?;
        o.check("mask_span", objective.mask_span > 0, "mask_span must be at least 1")?;
        o.check("negatives", objective.negatives > 0, "need at least 1 negative")?;
        o.check("temperature", objective.temperature > 0.0, "temperature must be positive")?;

        let present = |name: &str| ini.section(name);
        let require_absent = |name: &str, why: &str| -> Result<()> {
            match present(name) {
                Some(s) => Err(CliError::rule(Some(s.line), format!("regime {regime} forbids {why} [{name}]"))),
                None => Ok(()),
            }
        };
        if !regime.needs_pretrain() {
            require_absent("pretrain", "a pretrain plan")?;
            require_absent("source", "a source corpus")?;
        }
        if !regime.has_adaptation() {
            require_absent("adapt", "an adaptation plan")?;
        }
        if !regime.is_cross() {
            require_absent("transfer", "a transfer corpus")?;
        }

        let corpus = |name: &str, domain: Domain, seed_offset: u64, sizes: [usize; 3]| {
            parse_corpus(&view(name), name, &base, domain, seed + seed_offset, sizes)
        };
        let pretrain =
            if regime.needs_pretrain() { Some(parse_stage(&view("pretrain"), &base, &model_cfg, Defaults::pretrain())?) } else { None };
        let init = pretrain.as_ref().and_then(|p| p.init.clone());
        let source = if regime.needs_pretrain() && (init.is_none() || present("source").is_some() || kind == ObjectiveKind::MaskedPredict) {
            Some(corpus("source", Domain::Source, 100, [300, 0, 0])?)
        } else {
            None
        };
        if let Some(s) = &source {
            if split_empty(&s.source, 0) {
                return Err(CliError::rule(present("source").map(|s| s.line), "source corpus needs a non-empty train split"));
            }
        }
        let target = corpus("target", Domain::Target, 200, [16, 50, 200])?;
        if split_empty(&target.source, 0) || split_empty(&target.source, 2) {
            return Err(CliError::rule(present("target").map(|s| s.line), "target corpus needs non-empty train and test splits"));
        }
        let transfer = if regime.is_cross() {
            let t = corpus("transfer", Domain::Target, 300, [16, 0, 0])?;
            if split_empty(&t.source, 0) {
                return Err(CliError::rule(present("transfer").map(|s| s.line), "transfer corpus needs a non-empty train split"));
            }
            Some(t)
        } else {
            None
        };
        let adapt = if regime.has_adaptation() { Some(parse_stage(&view("adapt"), &base, &model_cfg, Defaults::adapt())?) } else { None };
        let finetune = parse_stage(&view("finetune"), &base, &model_cfg, Defaults::finetune())?;

        let cfg = Self { regime, seed, out, d_ada, model, features, objective, source, target, transfer, pretrain, adapt, finetune };
        cfg.check_paths(&ini)?;
        Ok(cfg)
    }

    fn check_paths(&self, ini: &Ini) -> Result<()> {
        let line_of = |section: &str, key: &str| ini.section(section).and_then(|s| s.get(key)).map(|e| e.line);
        let corpora = [("source", &self.source), ("target", &Some(self.target.clone())), ("transfer", &self.transfer)];
        for (name, c) in corpora {
            if let Some(CorpusSection { source: CorpusSource::Manifest { splits }, .. }) = c {
                for (split, p) in SPLITS.iter().zip(splits) {
                    if let Some(p) = p {
                        if !p.is_file() {
                            return Err(CliError::Path {
                                line: line_of(name, split),
                                what: format!("{name}.{split} manifest"),
                                path: p.clone(),
                            });
                        }
                    }
                }
            }
        }
        if let Some(p) = self.pretrain.as_ref().and_then(|p| p.init.as_ref()) {
            if !p.is_file() {
                return Err(CliError::Path { line: line_of("pretrain", "init"), what: "pretrain.init checkpoint".into(), path: p.clone() });
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.model_config()
    }

    /// Effective configuration with every default spelled out. Parsing the
    /// echo yields the same echo.
    pub fn normalized(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "regime = {}", self.regime);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        if let Some(d) = self.d_ada {
            let _ = writeln!(s, "d_ada = {d}");
        }
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "preset = {}", self.model.preset);
        let _ = writeln!(s, "causal = {}", self.model.causal);
        let _ = writeln!(s, "adapter_placement = {}", self.model.adapter_placement.name());
        let f = &self.features;
        let _ = writeln!(s, "\n[features]");
        let _ = writeln!(s, "sample_rate = {}", f.sample_rate);
        let _ = writeln!(s, "window = {}", f.window);
        let _ = writeln!(s, "hop = {}", f.hop);
        let _ = writeln!(s, "n_fft = {}", f.n_fft);
        let _ = writeln!(s, "n_mels = {}", f.n_mels);
        let _ = writeln!(s, "mel_floor = {:e}", f.mel_floor);
        let o = &self.objective;
        let _ = writeln!(s, "\n[objective]");
        let _ = writeln!(s, "kind = {}", o.kind);
        match o.kind {
            ObjectiveKind::Apc => {
                let _ = writeln!(s, "shifts = {}", join(&o.shifts));
            }
            ObjectiveKind::MaskedPredict => {
                let _ = writeln!(s, "clusters = {}", o.clusters);
                let _ = writeln!(s, "kmeans_iters = {}", o.kmeans_iters);
                let _ = writeln!(s, "mask_prob = {}", o.mask_prob);
                let _ = writeln!(s, "mask_span = {}", o.mask_span);
            }
            ObjectiveKind::Contrastive => {
                let _ = writeln!(s, "mask_prob = {}", o.mask_prob);
                let _ = writeln!(s, "mask_span = {}", o.mask_span);
                let _ = writeln!(s, "negatives = {}", o.negatives);
                let _ = writeln!(s, "temperature = {}", o.temperature);
            }
            ObjectiveKind::Ctc => {}
        }
        for (name, c) in [("source", &self.source), ("target", &Some(self.target.clone())), ("transfer", &self.transfer)] {
            if let Some(c) = c {
                write_corpus(&mut s, name, c);
            }
        }
        for (name, st) in [("pretrain", &self.pretrain), ("adapt", &self.adapt), ("finetune", &Some(self.finetune.clone()))] {
            if let Some(st) = st {
                write_stage(&mut s, name, st);
            }
        }
        s
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn parse_list(v: &str) -> Option<Vec<usize>> {
    let items: Option<Vec<usize>> = v.split(',').map(|x| x.trim().parse().ok()).collect();
    items.filter(|l| !l.is_empty())
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split_empty(c: &CorpusSource, k: usize) -> bool {
    match c {
        CorpusSource::Synthetic { sizes, .. } => sizes[k] == 0,
        CorpusSource::Manifest { splits } => splits[k].is_none(),
    }
}

fn parse_corpus(v: &View, name: &str, base: &Path, domain: Domain, seed: u64, sizes: [usize; 3]) -> Result<CorpusSection> {
    let kind = v.str("kind").unwrap_or("synthetic");
    let source = match kind {
        "synthetic" => {
            let domain = match v.str("domain") {
                None => domain,
                Some("source") => Domain::Source,
                Some("target") => Domain::Target,
                Some(_) => {
                    return Err(v.check("domain", false, "expected source or target").unwrap_err());
                }
            };
            let mut n = sizes;
            for (k, split) in SPLITS.iter().enumerate() {
                if let Some(x) = v.usize(split)? {
                    n[k] = x;
                }
            }
            let noise = v.f64("noise")?.unwrap_or(1.2);
            v.check("noise", noise >= 0.0, "noise must be non-negative")?;
            CorpusSource::Synthetic { domain, seed: v.u64("seed")?.unwrap_or(seed), noise, sizes: n }
        }
        "manifest" => {
            for key in ["domain", "seed", "noise"] {
                v.check(key, v.entry(key).is_none(), "only applies to synthetic corpora")?;
            }
            let splits = SPLITS.map(|s| v.path(s, base).map(|(p, _)| p));
            CorpusSource::Manifest { splits }
        }
        _ => return Err(v.check("kind", false, "expected synthetic or manifest").unwrap_err()),
    };
    Ok(CorpusSection { name: v.str("name").unwrap_or(name).to_string(), source })
}

fn write_corpus(s: &mut String, name: &str, c: &CorpusSection) {
    let _ = writeln!(s, "\n[{name}]");
    let _ = writeln!(s, "name = {}", c.name);
    match &c.source {
        CorpusSource::Synthetic { domain, seed, noise, sizes } => {
            let _ = writeln!(s, "kind = synthetic");
            let _ = writeln!(s, "domain = {}", domain.name());
            let _ = writeln!(s, "seed = {seed}");
            let _ = writeln!(s, "noise = {noise}");
            for (k, split) in SPLITS.iter().enumerate() {
                let _ = writeln!(s, "{split} = {}", sizes[k]);
            }
        }
        CorpusSource::Manifest { splits } => {
            let _ = writeln!(s, "kind = manifest");
            for (split, p) in SPLITS.iter().zip(splits) {
                if let Some(p) = p {
                    let _ = writeln!(s, "{split} = {}", p.display());
                }
            }
        }
    }
}

struct Defaults {
    steps: u64,
    factor: f64,
    warmup: u64,
    augment: bool,
    trainable: GroupSet,
}

impl Defaults {
    fn pretrain() -> Self {
        Self { steps: 600, factor: 0.2, warmup: 100, augment: false, trainable: GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]) }
    }

    fn adapt() -> Self {
        Self { steps: 150, factor: 0.1, warmup: 50, augment: false, trainable: GroupSet::of(&[ParamGroup::Adapter]) }
    }

    fn finetune() -> Self {
        Self {
            steps: 150,
            factor: 0.2,
            warmup: 100,
            augment: true,
            trainable: GroupSet::of(&[ParamGroup::Backbone, ParamGroup::Adapter, ParamGroup::AsrHead]),
        }
    }
}

fn parse_stage(v: &View, base: &Path, model: &ModelConfig, d: Defaults) -> Result<StageSection> {
    let steps = v.u64("steps")?.unwrap_or(d.steps);
    let schedule = match v.str("schedule").unwrap_or("noam") {
        "noam" => {
            for key in ["peak", "hold", "total", "final_ratio"] {
                v.check(key, v.entry(key).is_none(), "only applies to the tristage schedule")?;
            }
            Scheduler::Noam(NoamConfig {
                factor: v.f64("factor")?.unwrap_or(d.factor),
                warmup_steps: v.u64("warmup")?.unwrap_or(d.warmup),
                d_model: model.d_model,
            })
        }
        "tristage" => {
            v.check("factor", v.entry("factor").is_none(), "only applies to the noam schedule")?;
            let final_ratio = match v.str("final_ratio") {
                None | Some("none") => None,
                Some(_) => v.f64("final_ratio")?,
            };
            let peak = v.f64("peak")?.ok_or_else(|| CliError::rule(v.line(), "tristage schedule requires peak"))?;
            let warmup = v.u64("warmup")?.unwrap_or(steps / 10);
            let hold = v.u64("hold")?.unwrap_or(steps * 4 / 10);
            Scheduler::TriStage(TriStageConfig {
                warmup_steps: warmup,
                hold_steps: hold,
                total_steps: v.u64("total")?.unwrap_or(steps),
                peak_lr: peak,
                final_ratio,
            })
        }
        _ => return Err(v.check("schedule", false, "expected noam or tristage").unwrap_err()),
    };
    schedule.validate().map_err(|e| CliError::rule(v.entry("schedule").map(|e| e.line).or(v.line()), e.to_string()))?;
    let trainable = v.with("trainable", GroupSet::parse_list)?.unwrap_or(d.trainable);
    v.check("trainable", !trainable.is_empty(), "at least one group must be trainable")?;
    v.check(
        "trainable",
        v.entry("trainable").is_none() || !trainable.contains(ParamGroup::SslHead),
        "the ssl head is removed before finetuning",
    )?;
    let st = StageSection {
        steps,
        batch_size: v.usize("batch_size")?.unwrap_or(8),
        schedule,
        log_every: v.u64("log_every")?.unwrap_or(10),
        augment: v.bool("augment")?.unwrap_or(d.augment),
        trainable,
        init: v.path("init", base).map(|(p, _)| p),
    };
    v.check("batch_size", st.batch_size > 0, "batch_size must be at least 1")?;
    v.check("log_every", st.log_every > 0, "log_every must be at least 1")?;
    if let Scheduler::TriStage(c) = st.schedule {
        v.check("total", c.total_steps >= st.steps, "total must cover the stage budget")?;
    }
    Ok(st)
}

fn write_stage(s: &mut String, name: &str, st: &StageSection) {
    let _ = writeln!(s, "\n[{name}]");
    let _ = writeln!(s, "steps = {}", st.steps);
    let _ = writeln!(s, "batch_size = {}", st.batch_size);
    match st.schedule {
        Scheduler::Noam(c) => {
            let _ = writeln!(s, "schedule = noam");
            let _ = writeln!(s, "factor = {}", c.factor);
            let _ = writeln!(s, "warmup = {}", c.warmup_steps);
        }
        Scheduler::TriStage(c) => {
            let _ = writeln!(s, "schedule = tristage");
            let _ = writeln!(s, "peak = {:e}", c.peak_lr);
            let _ = writeln!(s, "warmup = {}", c.warmup_steps);
            let _ = writeln!(s, "hold = {}", c.hold_steps);
            let _ = writeln!(s, "total = {}", c.total_steps);
            match c.final_ratio {
                Some(r) => {
                    let _ = writeln!(s, "final_ratio = {r}");
                }
                None => {
                    let _ = writeln!(s, "final_ratio = none");
                }
            }
        }
    }
    let _ = writeln!(s, "log_every = {}", st.log_every);
    let _ = writeln!(s, "augment = {}", st.augment);
    if name == "finetune" {
        let _ = writeln!(s, "trainable = {}", st.trainable);
    }
    if let Some(p) = &st.init {
        let _ = writeln!(s, "init = {}", p.display());
    }
}
