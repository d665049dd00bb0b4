//! Stage orchestration: schedules, the freeze-respecting trainer,
//! checkpoints, and the DRAFT, SAFT and baseline pipelines.

mod checkpoint;
mod eval;
mod pipeline;
mod plan;
mod schedule;
mod stage;

pub use checkpoint::{load_checkpoint, model_from_archive, model_into, optimizer_from_archive, save_checkpoint, to_archive};
pub use eval::{evaluate, Decoded, EvalResult, NC_THRESHOLD};
pub use pipeline::{
    adapt_draft, cross_transfer, pretrain, run_adapter_finetune, run_baseline, run_draft, run_draft_from, run_finetune_from, run_saft_from,
    saft_cross_transfer, PipelineRun, Regime, StageRecord,
};
pub use plan::{Augment, CorpusRef, Objective, ObjectiveKind, Stage, StagePlan};
pub use schedule::{noam_lr, tristage_lr, NoamConfig, Scheduler, TriStageConfig};
pub use stage::{evaluate_loss, objective_gradcheck, restore_rng, rng_state, run_stage, utterance_loss, MetricRow, StageReport};
