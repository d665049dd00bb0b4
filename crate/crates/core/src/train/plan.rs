use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::data::SpecAugmentConfig;
use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::numerics::{AdamConfig, GroupSet, ParamGroup};
use crate::ssl::{MaskSpec, PseudoLabelCodebook};

use super::schedule::Scheduler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Adapt,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapt => "adapt",
            Stage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which corpus a stage reads: the source domain or the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusRef {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Apc,
    MaskedPredict,
    Contrastive,
    Ctc,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Apc => "apc",
            ObjectiveKind::MaskedPredict => "masked_predict",
            ObjectiveKind::Contrastive => "contrastive",
            ObjectiveKind::Ctc => "ctc",
        }
    }

    pub fn is_ssl(self) -> bool {
        self != ObjectiveKind::Ctc
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "apc" => Ok(Self::Apc),
            "masked_predict" => Ok(Self::MaskedPredict),
            "contrastive" => Ok(Self::Contrastive),
            "ctc" => Ok(Self::Ctc),
            _ => Err(Error::Config(format!("unknown objective `{s}` (expected apc, masked_predict, contrastive or ctc)"))),
        }
    }
}

/// Training loss of a stage together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Apc { shifts: Vec<usize> },
    MaskedPredict { codebook: Arc<PseudoLabelCodebook>, mask: MaskSpec },
    Contrastive { mask: MaskSpec, n_negatives: usize, temperature: f64 },
    Ctc,
}

impl Objective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Objective::Apc { .. } => ObjectiveKind::Apc,
            Objective::MaskedPredict { .. } => ObjectiveKind::MaskedPredict,
            Objective::Contrastive { .. } => ObjectiveKind::Contrastive,
            Objective::Ctc => ObjectiveKind::Ctc,
        }
    }

    /// Whether a model carrying `head` can be trained with this objective.
    pub fn matches_head(&self, head: &HeadKind) -> bool {
        match (self, head) {
            (Objective::Apc { shifts }, HeadKind::Apc { shifts: h }) => shifts == h,
            (Objective::MaskedPredict { codebook, .. }, HeadKind::MaskedPredict { k }) => codebook.k == *k,
            (Objective::Contrastive { .. }, HeadKind::Contrastive { .. }) => true,
            (Objective::Ctc, HeadKind::Asr { .. }) => true,
            _ => false,
        }
    }

    /// Head suited to this objective. `width` is the contrastive projection
    /// width or the ASR vocabulary size; other objectives ignore it.
    pub fn head(&self, width: usize) -> HeadKind {
        match self {
            Objective::Apc { shifts } => HeadKind::Apc { shifts: shifts.clone() },
            Objective::MaskedPredict { codebook, .. } => HeadKind::MaskedPredict { k: codebook.k },
            Objective::Contrastive { .. } => HeadKind::Contrastive { dim: width },
            Objective::Ctc => HeadKind::Asr { vocab: width },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::Apc { shifts } => HeadKind::Apc { shifts: shifts.clone() }.validate(),
            Objective::MaskedPredict { mask, .. } => mask.validate(),
            Objective::Contrastive { mask, n_negatives, temperature } => {
                mask.validate()?;
                if *n_negatives == 0 || !(*temperature > 0.0) {
                    return Err(Error::Config("contrastive needs n_negatives >= 1 and temperature > 0".into()));
                }
                Ok(())
            }
            Objective::Ctc => Ok(()),
        }
    }
}

/// Feature-level augmentation applied per utterance and step.
#[derive(Debug, Clone, PartialEq)]
pub struct Augment {
    pub spec: SpecAugmentConfig,
    /// One factor is drawn uniformly per utterance.
    pub speed_factors: Vec<f64>,
}

impl Augment {
    pub fn standard() -> Self {
        Self {
            spec: SpecAugmentConfig { n_time_masks: 2, max_time_width: 4, n_freq_masks: 2, max_freq_width: 8 },
            speed_factors: vec![0.9, 1.0, 1.1],
        }
    }
}

/// One training stage: data, loss, trainable groups, budget and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub corpus: CorpusRef,
    pub objective: Objective,
    pub trainable: GroupSet,
    pub steps: u64,
    pub batch_size: usize,
    pub scheduler: Scheduler,
    pub seed: u64,
    pub augment: Option<Augment>,
    pub adam: AdamConfig,
    /// Metrics cadence in steps.
    pub log_every: u64,
}

impl StagePlan {
    pub fn new(stage: Stage, corpus: CorpusRef, objective: Objective, trainable: &[ParamGroup], steps: u64, scheduler: Scheduler) -> Self {
        Self {
            stage,
            corpus,
            objective,
            trainable: GroupSet::of(trainable),
            steps,
            batch_size: 8,
            scheduler,
            seed: 0,
            augment: None,
            adam: AdamConfig::default(),
            log_every: 10,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_augment(mut self, augment: Option<Augment>) -> Self {
        self.augment = augment;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config(format!("{} stage needs steps >= 1", self.stage)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if self.trainable.is_empty() {
            return Err(Error::Config(format!("{} stage trains no parameter group", self.stage)));
        }
        match (self.stage, self.objective.kind()) {
            (Stage::Finetune, k) if k != ObjectiveKind::Ctc => return Err(Error::Config(format!("finetune stage must use ctc, not {k}"))),
            (Stage::Pretrain | Stage::Adapt, ObjectiveKind::Ctc) => {
                return Err(Error::Config(format!("{} stage needs a self-supervised objective", self.stage)))
            }
            _ => {}
        }
        self.objective.validate()?;
        self.scheduler.validate()?;
        if let Scheduler::TriStage(c) = self.scheduler {
            if c.total_steps < self.steps {
                return Err(Error::Config(format!(
                    "tri-stage total_steps {} is shorter than the stage budget {}",
                    c.total_steps, self.steps
                )));
            }
        }
        if let Some(a) = &self.augment {
            for f in &a.speed_factors {
                if !(*f > 0.0) {
                    return Err(Error::Config(format!("speed factor must be positive, got {f}")));
                }
            }
        }
        Ok(())
    }
}
