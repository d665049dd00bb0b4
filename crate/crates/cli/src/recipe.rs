//! Turns an [`ExperimentConfig`] into stage plans, runs the regime and
//! writes its artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use draftlab_core::asr::{format_report, score_pairs, ScoreUnit};
use draftlab_core::data::{load_manifest, Corpus, LogMel, Tokenizer, Utterance};
use draftlab_core::model::{count_layout, derive_seed, AcousticModel, HeadKind, ModelConfig};
use draftlab_core::numerics::{GroupSet, ParamGroup, Tensor};
use draftlab_core::ssl::{kmeans_fit, MaskSpec, PseudoLabelCodebook};
use draftlab_core::train::{
    adapt_draft, cross_transfer, evaluate, load_checkpoint, pretrain, run_adapter_finetune, run_baseline, run_draft_from,
    run_finetune_from, run_saft_from, run_stage, saft_cross_transfer, save_checkpoint, to_archive, Augment, CorpusRef, EvalResult,
    Objective, ObjectiveKind, PipelineRun, Regime, Stage, StagePlan, StageRecord,
};

use crate::config::{CorpusSection, CorpusSource, ExperimentConfig, StageSection, SPLITS};
use crate::error::{CliError, Result};
use crate::summary::Summary;

pub const NORMALIZED_FILE: &str = "config.normalized.ini";

/// Stage seeds are offsets of the experiment seed.
const ADAPT_SEED_OFFSET: u64 = 10;
const FINETUNE_SEED_OFFSET: u64 = 20;

pub fn tokenizer() -> Tokenizer {
    Tokenizer::default()
}

pub fn load_corpus(c: &CorpusSection, cfg: &ExperimentConfig) -> Result<Corpus> {
    let tok = tokenizer();
    match &c.source {
        CorpusSource::Synthetic { domain, seed, noise, sizes } => {
            Ok(Corpus::synthetic(&c.name, &domain.spec(*seed, *noise), *sizes, &tok)?)
        }
        CorpusSource::Manifest { splits } => {
            let lm = LogMel::new(cfg.features.clone())?;
            let load = |p: &Option<PathBuf>| -> Result<Vec<Utterance>> {
                match p {
                    Some(p) => Ok(load_manifest(p, &lm, &tok)?),
                    None => Ok(Vec::new()),
                }
            };
            Ok(Corpus { name: c.name.clone(), train: load(&splits[0])?, dev: load(&splits[1])?, test: load(&splits[2])? })
        }
    }
}

/// Every corpus the regime reads.
#[derive(Debug, Clone)]
pub struct Data {
    pub source: Option<Corpus>,
    pub target: Corpus,
    pub transfer: Option<Corpus>,
}

impl Data {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            source: cfg.source.as_ref().map(|c| load_corpus(c, cfg)).transpose()?,
            target: load_corpus(&cfg.target, cfg)?,
            transfer: cfg.transfer.as_ref().map(|c| load_corpus(c, cfg)).transpose()?,
        })
    }
}

/// k-means codebook over every source training frame.
pub fn fit_codebook(cfg: &ExperimentConfig, source: &Corpus) -> Result<PseudoLabelCodebook> {
    let width = source.train.first().map_or(0, |u| u.features.last_dim());
    let data: Vec<f32> = source.train.iter().flat_map(|u| u.features.data().iter().copied()).collect();
    let frames = Tensor::new(vec![data.len() / width.max(1), width], data)?;
    Ok(kmeans_fit(&frames, cfg.objective.clusters, cfg.objective.kmeans_iters, derive_seed(cfg.seed, "kmeans"))?)
}

/// The self-supervised objective shared by pretraining and adaptation.
pub fn objective(cfg: &ExperimentConfig, source: Option<&Corpus>) -> Result<Objective> {
    let o = &cfg.objective;
    let mask = MaskSpec { mask_prob: o.mask_prob, span_len: o.mask_span, seed: cfg.seed };
    Ok(match o.kind {
        ObjectiveKind::Apc => Objective::Apc { shifts: o.shifts.clone() },
        ObjectiveKind::MaskedPredict => {
            let source = source.ok_or_else(|| CliError::rule(None, "masked_predict needs a source corpus for k-means"))?;
            Objective::MaskedPredict { codebook: Arc::new(fit_codebook(cfg, source)?), mask }
        }
        ObjectiveKind::Contrastive => Objective::Contrastive { mask, n_negatives: o.negatives, temperature: o.temperature },
        ObjectiveKind::Ctc => return Err(CliError::rule(None, "objective must be self-supervised")),
    })
}

fn plan(stage: Stage, s: &StageSection, objective: Objective, trainable: GroupSet, seed: u64) -> StagePlan {
    let corpus = if stage == Stage::Pretrain { CorpusRef::Source } else { CorpusRef::Target };
    let mut p = StagePlan::new(stage, corpus, objective, &trainable.iter().collect::<Vec<_>>(), s.steps, s.schedule)
        .with_seed(seed)
        .with_batch_size(s.batch_size)
        .with_augment(s.augment.then(Augment::standard));
    p.log_every = s.log_every;
    p
}

/// Stage plans derived from the configuration.
#[derive(Debug, Clone)]
pub struct Plans {
    pub objective: Objective,
    pub pretrain: Option<StagePlan>,
    pub adapt: Option<StagePlan>,
    pub finetune: StagePlan,
}

impl Plans {
    pub fn new(cfg: &ExperimentConfig, objective: Objective) -> Self {
        let adapt_groups = match cfg.regime {
            Regime::DraftSelf | Regime::DraftCross => GroupSet::of(&[ParamGroup::Adapter]),
            _ => GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]),
        };
        Self {
            pretrain: cfg
                .pretrain
                .as_ref()
                .map(|s| plan(Stage::Pretrain, s, objective.clone(), GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]), cfg.seed)),
            adapt: cfg.adapt.as_ref().map(|s| plan(Stage::Adapt, s, objective.clone(), adapt_groups, cfg.seed + ADAPT_SEED_OFFSET)),
            finetune: plan(Stage::Finetune, &cfg.finetune, Objective::Ctc, cfg.finetune.trainable, cfg.seed + FINETUNE_SEED_OFFSET),
            objective,
        }
    }
}

/// Stage 1: loads `pretrain.init` or trains on the source corpus.
pub fn stage1(cfg: &ExperimentConfig, data: &Data, plans: &Plans) -> Result<(AcousticModel, Option<StageRecord>)> {
    let mc = cfg.model_config()?;
    let p = plans.pretrain.as_ref().ok_or_else(|| CliError::rule(None, format!("regime {} has no pretraining stage", cfg.regime)))?;
    if let Some(init) = cfg.pretrain.as_ref().and_then(|s| s.init.as_ref()) {
        let (model, _) = load_checkpoint(init, &mc)?;
        if !plans.objective.matches_head(model.head()) {
            return Err(draftlab_core::Error::CheckpointContent(format!(
                "{} carries head {}, objective is {}",
                init.display(),
                model.head(),
                plans.objective.kind()
            ))
            .into());
        }
        return Ok((model, None));
    }
    let source = data.source.as_ref().ok_or_else(|| CliError::rule(None, "pretraining needs a source corpus"))?;
    let (model, rec) = pretrain(&mc, p, &source.train, mc.d_model)?;
    Ok((model, Some(rec)))
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::rule(None, format!("missing {what}")))
}

/// SAFT Stage 2 alone: every backbone and SSL-head parameter on `data`.
fn saft_adapt(stage1: &AcousticModel, plan: &StagePlan, data: &[Utterance]) -> Result<(AcousticModel, Option<StageRecord>)> {
    let mut model = stage1.clone();
    if plan.steps == 0 {
        return Ok((model, None));
    }
    let mut p = plan.clone();
    p.trainable = GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]);
    let report = run_stage(&mut model, &p, data)?;
    let checkpoint = to_archive(&model, report.steps, Some(&report.optimizer), Some(report.rng))?;
    Ok((model, Some(StageRecord { name: "adapt", report, checkpoint })))
}

/// Stages 2 and 3 of the regime from an already pretrained model.
pub fn run_from(cfg: &ExperimentConfig, data: &Data, plans: &Plans, stage1: Option<&AcousticModel>) -> Result<PipelineRun> {
    let mc = cfg.model_config()?;
    let vocab = tokenizer().vocab_size();
    let train = &data.target.train;
    let ft = &plans.finetune;
    if cfg.regime == Regime::Baseline {
        return Ok(run_baseline(&mc, ft, train, vocab)?);
    }
    let s1 = stage1.ok_or_else(|| CliError::rule(None, format!("regime {} needs a pretrained model", cfg.regime)))?;
    let d_ada = || cfg.d_ada.ok_or_else(|| CliError::rule(None, format!("regime {} requires d_ada", cfg.regime)));
    let pretrain_peak = plans.pretrain.as_ref().map(|p| p.scheduler.peak());
    Ok(match cfg.regime {
        Regime::Baseline => unreachable!(),
        Regime::Finetune => run_finetune_from(s1, ft, train, vocab)?,
        Regime::AdapterFinetune => run_adapter_finetune(s1, d_ada()?, ft, train, vocab)?,
        Regime::SaftSelf => run_saft_from(s1, pretrain_peak, need(&plans.adapt, "adapt plan")?, ft, train, train, vocab)?,
        Regime::DraftSelf => run_draft_from(s1, need(&plans.adapt, "adapt plan")?, ft, d_ada()?, train, train, vocab)?,
        Regime::DraftCross => {
            let a = &need(&data.transfer, "transfer corpus")?.train;
            let (_, adapted, warnings) = adapt_draft(s1, need(&plans.adapt, "adapt plan")?, d_ada()?, a, false)?;
            let mut run = cross_transfer(&adapted.checkpoint, &mc, ft, train, vocab)?;
            run.stages.insert(0, adapted);
            run.warnings = warnings;
            run
        }
        Regime::SaftCross => {
            let a = &need(&data.transfer, "transfer corpus")?.train;
            let (model, adapted) = saft_adapt(s1, need(&plans.adapt, "adapt plan")?, a)?;
            let archive = match &adapted {
                Some(r) => r.checkpoint.clone(),
                None => to_archive(&model, 0, None, None)?,
            };
            let mut run = saft_cross_transfer(&archive, &mc, ft, train, vocab)?;
            if let Some(r) = adapted {
                run.stages.insert(0, r);
            }
            run
        }
    })
}

/// Denominator of the relative updated-parameter column: the full-model
/// SAFT update (backbone plus SSL head) of the same preset.
pub fn saft_reference(config: &ModelConfig, head: &HeadKind) -> usize {
    count_layout(config, head, None, GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]))
}

/// A finished regime with its evaluations.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub run: PipelineRun,
    pub codebook: Option<Arc<PseudoLabelCodebook>>,
    pub dev: Option<EvalResult>,
    pub test: EvalResult,
    pub summary: Summary,
}

pub fn finish(cfg: &ExperimentConfig, data: &Data, plans: &Plans, mut run: PipelineRun, pre: Option<StageRecord>) -> Result<Outcome> {
    if let Some(rec) = pre {
        run.stages.insert(0, rec);
    }
    let mc = cfg.model_config()?;
    let dev = if data.target.dev.is_empty() { None } else { Some(evaluate(&run.model, &data.target.dev)?) };
    let test = evaluate(&run.model, &data.target.test)?;
    let updated = run.updated_params();
    let reference = saft_reference(&mc, &plans.objective.head(mc.d_model));
    let summary = Summary {
        regime: cfg.regime,
        objective: if cfg.regime == Regime::Baseline { "none".into() } else { plans.objective.kind().to_string() },
        corpus: cfg.target.name.clone(),
        d_ada: cfg.d_ada,
        dev_wer: dev.as_ref().map(|d| d.error_rate),
        test_wer: test.error_rate,
        updated_params_total: updated,
        updated_params_relative: updated as f64 / reference as f64,
        nc: Summary::is_nc(test.error_rate),
    };
    let codebook = match &plans.objective {
        Objective::MaskedPredict { codebook, .. } => Some(codebook.clone()),
        _ => None,
    };
    Ok(Outcome { run, codebook, dev, test, summary })
}

/// Runs the whole regime in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = Data::load(cfg)?;
    let plans = Plans::new(cfg, objective(cfg, data.source.as_ref())?);
    let (s1, pre) = if cfg.regime.needs_pretrain() {
        let (m, r) = stage1(cfg, &data, &plans)?;
        (Some(m), r)
    } else {
        (None, None)
    };
    let run = run_from(cfg, &data, &plans, s1.as_ref())?;
    finish(cfg, &data, &plans, run, pre)
}

/// `id<TAB>reference<TAB>hypothesis` rows.
pub fn decode_rows(result: &EvalResult) -> Result<Vec<(String, String, String)>> {
    let tok = tokenizer();
    result.utterances.iter().map(|d| Ok((d.id.clone(), tok.detokenize(&d.reference)?, tok.detokenize(&d.hypothesis)?))).collect()
}

pub fn format_decode(rows: &[(String, String, String)]) -> String {
    rows.iter().map(|(i, r, h)| format!("{i}\t{r}\t{h}\n")).collect()
}

pub fn parse_decode(text: &str, path: &Path) -> Result<Vec<(String, String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(draftlab_core::Error::Corrupt(format!(
                    "{}:{}: expected id, reference and hypothesis columns",
                    path.display(),
                    n + 1
                ))
                .into());
            }
            Ok((f[0].to_string(), f[1].to_string(), f[2].to_string()))
        })
        .collect()
}

/// Character-level scoring report and corpus error rate.
pub fn score(rows: &[(String, String, String)]) -> Result<(String, f64)> {
    let (scored, rate) = score_pairs(rows, ScoreUnit::Char)?;
    Ok((format_report(&scored, rate), rate))
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub fn write_eval(dir: &Path, split: &str, result: &EvalResult) -> Result<f64> {
    let rows = decode_rows(result)?;
    write(dir.join(format!("decode_{split}.tsv")), format_decode(&rows))?;
    let (report, rate) = score(&rows)?;
    write(dir.join(format!("score_{split}.txt")), report)?;
    Ok(rate)
}

/// Checkpoints, metrics, decodes, scores and the summary under `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(dir.join(NORMALIZED_FILE), cfg.normalized())?;
    for s in &outcome.run.stages {
        save_checkpoint(dir.join(format!("{}.ckpt", s.name)), &s.checkpoint)?;
        write(dir.join(format!("{}.metrics.tsv", s.name)), s.report.metrics_tsv())?;
    }
    if let Some(cb) = &outcome.codebook {
        cb.save(dir.join("codebook.archive"))?;
    }
    if let Some(dev) = &outcome.dev {
        write_eval(dir, SPLITS[1], dev)?;
    }
    write_eval(dir, SPLITS[2], &outcome.test)?;
    outcome.summary.write(dir)
}
