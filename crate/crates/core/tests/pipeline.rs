//! Stage composition: freezing across stages, determinism, checkpoints and
//! the degenerate equivalences between regimes.

mod common;

use draftlab_core::archive::Archive;
use draftlab_core::data::Utterance;
use draftlab_core::model::{AcousticModel, ModelConfig};
use draftlab_core::numerics::ParamGroup;
use draftlab_core::train::{
    adapt_draft, cross_transfer, evaluate, model_from_archive, model_into, pretrain, run_draft, run_draft_from, run_finetune_from,
    run_saft_from, save_checkpoint, to_archive, CorpusRef, Objective, Stage, StagePlan,
};
use draftlab_core::Error;

struct Setup {
    source: Vec<Utterance>,
    target: Vec<Utterance>,
    pre: StagePlan,
    adapt: StagePlan,
    ft: StagePlan,
}

fn setup() -> Setup {
    use ParamGroup::*;
    Setup {
        source: common::source_utts(24, 1),
        target: common::target_utts(12, 2),
        pre: StagePlan::new(Stage::Pretrain, CorpusRef::Source, common::apc(), &[Backbone, SslHead], 12, common::noam(4))
            .with_batch_size(4)
            .with_seed(1),
        adapt: StagePlan::new(Stage::Adapt, CorpusRef::Target, common::apc(), &[Adapter], 8, common::noam(4))
            .with_batch_size(4)
            .with_seed(11),
        ft: StagePlan::new(Stage::Finetune, CorpusRef::Target, Objective::Ctc, &[Backbone, Adapter, AsrHead], 8, common::noam(4))
            .with_batch_size(4)
            .with_seed(21)
            .with_augment(Some(draftlab_core::train::Augment::standard())),
    }
}

fn stage1(s: &Setup) -> AcousticModel {
    pretrain(&ModelConfig::desk(), &s.pre, &s.source, 64).unwrap().0
}

fn group_bytes(a: &Archive, groups: &[ParamGroup]) -> Vec<(String, Vec<u8>)> {
    a.tensors
        .iter()
        .filter(|t| groups.contains(&t.group))
        .map(|t| (t.name.clone(), t.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect()
}

#[test]
fn draft_adaptation_leaves_backbone_and_ssl_head_untouched() {
    let s = setup();
    let m1 = stage1(&s);
    let ck1 = to_archive(&m1, 0, None, None).unwrap();
    let (m2, rec, _) = adapt_draft(&m1, &s.adapt, 16, &s.target, false).unwrap();
    let keep = [ParamGroup::Backbone, ParamGroup::SslHead];
    assert_eq!(group_bytes(&ck1, &keep), group_bytes(&rec.checkpoint, &keep));
    assert_ne!(
        group_bytes(&to_archive(&m2, 0, None, None).unwrap(), &[ParamGroup::Adapter]),
        group_bytes(
            &to_archive(
                &{
                    let mut m = m1.clone();
                    m.insert_adapters(16, s.adapt.seed).unwrap();
                    m
                },
                0,
                None,
                None
            )
            .unwrap(),
            &[ParamGroup::Adapter]
        )
    );
    assert_eq!(rec.report.updated_params, m2.count_params(draftlab_core::numerics::GroupSet::of(&[ParamGroup::Adapter])));
}

#[test]
fn identical_seeds_give_identical_runs() {
    let s = setup();
    let run = || {
        let r = run_draft(&ModelConfig::desk(), &s.pre, &s.adapt, &s.ft, 16, &s.source, &s.target, common::vocab(), 64).unwrap();
        let bytes = r.stages.last().unwrap().checkpoint.encode().unwrap();
        let eval = evaluate(&r.model, &s.target[..4]).unwrap();
        (bytes, eval.error_rate.to_bits(), r.stages.iter().map(|st| st.report.metrics_tsv()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let s = setup();
    let r = run_draft(&ModelConfig::desk(), &s.pre, &s.adapt, &s.ft, 8, &s.source, &s.target, common::vocab(), 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for rec in &r.stages {
        let a = dir.path().join(format!("{}.ckpt", rec.name));
        let b = dir.path().join(format!("{}.again.ckpt", rec.name));
        save_checkpoint(&a, &rec.checkpoint).unwrap();
        let loaded = Archive::load(&a).unwrap();
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{}", rec.name);
        // through a model as well
        let m = model_from_archive(&loaded, &ModelConfig::desk()).unwrap();
        let again = to_archive(&m, loaded.step, None, None).unwrap();
        assert_eq!(again.tensors, loaded.tensors);
    }
}

#[test]
fn missing_adapter_tensors_are_named() {
    let s = setup();
    let m1 = stage1(&s);
    let (m2, rec, _) = adapt_draft(&m1, &s.adapt, 8, &s.target, false).unwrap();
    let mut partial = rec.checkpoint.clone();
    partial.tensors.retain(|t| t.name != "adapter02.w1");
    match model_into(&partial, &m2.arch) {
        Err(Error::MissingGroup { names }) => assert_eq!(names, vec!["adapter02.w1".to_string()]),
        other => panic!("expected a missing-group error, got {other:?}"),
    }
    let mut none = rec.checkpoint.clone();
    none.tensors.retain(|t| t.group != ParamGroup::Adapter);
    assert!(cross_transfer(&none, &ModelConfig::desk(), &s.ft, &s.target, common::vocab()).is_err());
}

#[test]
fn saft_without_adaptation_is_finetune_only() {
    let s = setup();
    let m1 = stage1(&s);
    let mut zero = s.adapt.clone();
    zero.steps = 0;
    let saft = run_saft_from(&m1, None, &zero, &s.ft, &s.target, &s.target, common::vocab()).unwrap();
    let ft = run_finetune_from(&m1, &s.ft, &s.target, common::vocab()).unwrap();
    assert_eq!(saft.stages.len(), 1);
    assert_eq!(saft.stages[0].checkpoint.encode().unwrap(), ft.stages[0].checkpoint.encode().unwrap());
}

#[test]
fn cross_transfer_onto_the_same_corpus_is_self_transfer() {
    let s = setup();
    let m1 = stage1(&s);
    let (_, adapted, _) = adapt_draft(&m1, &s.adapt, 16, &s.target, false).unwrap();
    let cross = cross_transfer(&adapted.checkpoint, &ModelConfig::desk(), &s.ft, &s.target, common::vocab()).unwrap();
    let own = run_draft_from(&m1, &s.adapt, &s.ft, 16, &s.target, &s.target, common::vocab()).unwrap();
    assert_eq!(cross.stages.last().unwrap().checkpoint.encode().unwrap(), own.stages.last().unwrap().checkpoint.encode().unwrap());
}
