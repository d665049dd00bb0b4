use std::fmt;
use std::str::FromStr;

use crate::archive::Archive;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{AcousticModel, HeadKind, ModelConfig};
use crate::numerics::{GroupSet, ParamGroup};

use super::checkpoint::{model_from_archive, to_archive};
use super::plan::{Stage, StagePlan};
use super::stage::{run_stage, StageReport};

/// One finished stage: its report and the model right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub name: &'static str,
    pub report: StageReport,
    pub checkpoint: Archive,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: AcousticModel,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl PipelineRun {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Scalar parameters updated by the adaptation stage, or by finetuning
    /// when there is no adaptation stage.
    pub fn updated_params(&self) -> usize {
        self.stage("adapt").or_else(|| self.stage("finetune")).map_or(0, |s| s.report.updated_params)
    }
}

/// The comparison regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Baseline,
    Finetune,
    AdapterFinetune,
    SaftSelf,
    DraftSelf,
    SaftCross,
    DraftCross,
}

impl Regime {
    pub const ALL: [Regime; 7] = [
        Regime::Baseline,
        Regime::Finetune,
        Regime::AdapterFinetune,
        Regime::SaftSelf,
        Regime::DraftSelf,
        Regime::SaftCross,
        Regime::DraftCross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Finetune => "finetune",
            Regime::AdapterFinetune => "adapter_finetune",
            Regime::SaftSelf => "saft_self",
            Regime::DraftSelf => "draft_self",
            Regime::SaftCross => "saft_cross",
            Regime::DraftCross => "draft_cross",
        }
    }

    pub fn needs_pretrain(self) -> bool {
        self != Regime::Baseline
    }

    pub fn needs_d_ada(self) -> bool {
        matches!(self, Regime::AdapterFinetune | Regime::DraftSelf | Regime::DraftCross)
    }

    pub fn has_adaptation(self) -> bool {
        matches!(self, Regime::SaftSelf | Regime::DraftSelf | Regime::SaftCross | Regime::DraftCross)
    }

    pub fn is_cross(self) -> bool {
        matches!(self, Regime::SaftCross | Regime::DraftCross)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}` (expected one of {})", Regime::ALL.map(Regime::name).join(", "))))
    }
}

fn record(name: &'static str, model: &AcousticModel, report: StageReport) -> Result<StageRecord> {
    let checkpoint = to_archive(model, report.steps, Some(&report.optimizer), Some(report.rng))?;
    Ok(StageRecord { name, report, checkpoint })
}

fn present(groups: GroupSet, model: &AcousticModel) -> GroupSet {
    GroupSet::of(&groups.iter().filter(|g| model.store.has_group(*g)).collect::<Vec<_>>())
}

fn expect_stage(plan: &StagePlan, stage: Stage) -> Result<()> {
    if plan.stage != stage {
        return Err(Error::Config(format!("expected a {stage} plan, got a {} plan", plan.stage)));
    }
    Ok(())
}

/// Stage 1: self-supervised pretraining of a fresh model on the source
/// corpus. `head_width` sizes a contrastive projection.
pub fn pretrain(config: &ModelConfig, plan: &StagePlan, data: &[Utterance], head_width: usize) -> Result<(AcousticModel, StageRecord)> {
    expect_stage(plan, Stage::Pretrain)?;
    let mut model = AcousticModel::new(config.clone(), plan.objective.head(head_width), plan.seed)?;
    let mut p = plan.clone();
    p.trainable = GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]);
    let report = run_stage(&mut model, &p, data)?;
    let rec = record("pretrain", &model, report)?;
    Ok((model, rec))
}

/// Stage 3: new ASR head, CTC on the target corpus. Trains the plan's
/// groups that exist in the model.
fn finetune_stage(model: &mut AcousticModel, plan: &StagePlan, data: &[Utterance], vocab: usize) -> Result<StageRecord> {
    expect_stage(plan, Stage::Finetune)?;
    model.swap_head(HeadKind::Asr { vocab }, plan.seed)?;
    let mut p = plan.clone();
    p.trainable = present(p.trainable, model);
    let report = run_stage(model, &p, data)?;
    record("finetune", model, report)
}

/// Stage 2 of DRAFT: insert zero-initialized adapters and train only them
/// with the pretraining objective.
pub fn adapt_draft(
    stage1: &AcousticModel,
    plan: &StagePlan,
    d_ada: usize,
    data: &[Utterance],
    allow_objective_change: bool,
) -> Result<(AcousticModel, StageRecord, Vec<String>)> {
    expect_stage(plan, Stage::Adapt)?;
    let mut warnings = Vec::new();
    if !plan.objective.matches_head(&stage1.arch.head) {
        let msg = format!("adaptation objective {} differs from the pretraining head {}", plan.objective.kind(), stage1.arch.head);
        if !allow_objective_change {
            return Err(Error::Config(msg));
        }
        warnings.push(msg);
    }
    let adapter_only = GroupSet::of(&[ParamGroup::Adapter]);
    if plan.trainable != adapter_only {
        return Err(Error::Config(format!("DRAFT adaptation must train exactly {{Adapter}}, plan trains {}", plan.trainable)));
    }
    let mut model = stage1.clone();
    model.insert_adapters(d_ada, plan.seed)?;
    if !plan.objective.matches_head(&model.arch.head) {
        model.swap_head(plan.objective.head(model.arch.config.d_model), plan.seed)?;
    }
    let report = run_stage(&mut model, plan, data)?;
    let rec = record("adapt", &model, report)?;
    Ok((model, rec, warnings))
}

/// DRAFT from an already pretrained model.
pub fn run_draft_from(
    stage1: &AcousticModel,
    adapt: &StagePlan,
    finetune: &StagePlan,
    d_ada: usize,
    adapt_data: &[Utterance],
    finetune_data: &[Utterance],
    vocab: usize,
) -> Result<PipelineRun> {
    let (mut model, adapted, warnings) = adapt_draft(stage1, adapt, d_ada, adapt_data, false)?;
    let ft = finetune_stage(&mut model, finetune, finetune_data, vocab)?;
    Ok(PipelineRun { model, stages: vec![adapted, ft], warnings })
}

/// Pretrain on the source corpus, adapt adapters on the target corpus with
/// the same loss, then finetune everything with CTC.
#[allow(clippy::too_many_arguments)]
pub fn run_draft(
    config: &ModelConfig,
    pretrain_plan: &StagePlan,
    adapt: &StagePlan,
    finetune: &StagePlan,
    d_ada: usize,
    source: &[Utterance],
    target: &[Utterance],
    vocab: usize,
    head_width: usize,
) -> Result<PipelineRun> {
    let (stage1, pre) = pretrain(config, pretrain_plan, source, head_width)?;
    let mut run = run_draft_from(&stage1, adapt, finetune, d_ada, target, target, vocab)?;
    run.stages.insert(0, pre);
    Ok(run)
}

/// SAFT from a pretrained model: adapt every backbone and SSL-head
/// parameter, then finetune. A zero-step adaptation skips Stage 2.
pub fn run_saft_from(
    stage1: &AcousticModel,
    pretrain_peak: Option<f64>,
    adapt: &StagePlan,
    finetune: &StagePlan,
    adapt_data: &[Utterance],
    finetune_data: &[Utterance],
    vocab: usize,
) -> Result<PipelineRun> {
    expect_stage(adapt, Stage::Adapt)?;
    let mut model = stage1.clone();
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    if adapt.steps > 0 {
        if !adapt.objective.matches_head(&model.arch.head) {
            return Err(Error::Config(format!(
                "adaptation objective {} differs from the pretraining head {}",
                adapt.objective.kind(),
                model.arch.head
            )));
        }
        if let Some(peak) = pretrain_peak {
            if adapt.scheduler.peak() >= peak {
                warnings.push(format!("SAFT adaptation peak lr {:e} is not below the pretraining peak {:e}", adapt.scheduler.peak(), peak));
            }
        }
        let mut p = adapt.clone();
        p.trainable = GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]);
        let report = run_stage(&mut model, &p, adapt_data)?;
        stages.push(record("adapt", &model, report)?);
    }
    stages.push(finetune_stage(&mut model, finetune, finetune_data, vocab)?);
    Ok(PipelineRun { model, stages, warnings })
}

/// Finetune-only: pretrained backbone, new ASR head, CTC.
pub fn run_finetune_from(stage1: &AcousticModel, finetune: &StagePlan, data: &[Utterance], vocab: usize) -> Result<PipelineRun> {
    let mut model = stage1.clone();
    let ft = finetune_stage(&mut model, finetune, data, vocab)?;
    Ok(PipelineRun { model, stages: vec![ft], warnings: Vec::new() })
}

/// Baseline without self-supervision: CTC from random initialization.
pub fn run_baseline(config: &ModelConfig, finetune: &StagePlan, data: &[Utterance], vocab: usize) -> Result<PipelineRun> {
    expect_stage(finetune, Stage::Finetune)?;
    let mut model = AcousticModel::new(config.clone(), HeadKind::Asr { vocab }, finetune.seed)?;
    let mut p = finetune.clone();
    p.trainable = present(p.trainable, &model);
    let report = run_stage(&mut model, &p, data)?;
    let ft = record("finetune", &model, report)?;
    Ok(PipelineRun { model, stages: vec![ft], warnings: Vec::new() })
}

/// Adapters inserted into the pretrained model and trained with CTC
/// together with the ASR head; the backbone stays frozen.
pub fn run_adapter_finetune(
    stage1: &AcousticModel,
    d_ada: usize,
    finetune: &StagePlan,
    data: &[Utterance],
    vocab: usize,
) -> Result<PipelineRun> {
    let mut model = stage1.clone();
    model.insert_adapters(d_ada, finetune.seed)?;
    let mut p = finetune.clone();
    p.trainable = GroupSet::of(&[ParamGroup::Adapter, ParamGroup::AsrHead]);
    let ft = finetune_stage(&mut model, &p, data, vocab)?;
    Ok(PipelineRun { model, stages: vec![ft], warnings: Vec::new() })
}

/// Stage 3 on corpus B starting from a Stage-2 checkpoint adapted on
/// corpus A: backbone and adapters are loaded, the ASR head is fresh.
pub fn cross_transfer(
    adapted: &Archive,
    config: &ModelConfig,
    finetune: &StagePlan,
    data_b: &[Utterance],
    vocab: usize,
) -> Result<PipelineRun> {
    let mut model = model_from_archive(adapted, config)?;
    if !model.store.has_group(ParamGroup::Adapter) {
        return Err(Error::CheckpointContent("checkpoint holds no Adapter-group tensors".into()));
    }
    let ft = finetune_stage(&mut model, finetune, data_b, vocab)?;
    Ok(PipelineRun { model, stages: vec![ft], warnings: Vec::new() })
}

/// SAFT counterpart of [`cross_transfer`]: a fully adapted Stage-2
/// checkpoint finetuned on another corpus.
pub fn saft_cross_transfer(
    adapted: &Archive,
    config: &ModelConfig,
    finetune: &StagePlan,
    data_b: &[Utterance],
    vocab: usize,
) -> Result<PipelineRun> {
    let mut model = model_from_archive(adapted, config)?;
    let ft = finetune_stage(&mut model, finetune, data_b, vocab)?;
    Ok(PipelineRun { model, stages: vec![ft], warnings: Vec::new() })
}
