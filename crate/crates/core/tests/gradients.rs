mod common;

use draftlab_core::model::HeadKind;
use draftlab_core::numerics::gradcheck::{check_ops, op_cases, probe_tensor, readout};
use draftlab_core::numerics::{GradCheckReport, Graph, ParamGroup, ParamStore};
use draftlab_core::train::{objective_gradcheck, Objective};

fn assert_all(reports: &[(&str, GradCheckReport)], tol: f64) {
    for (op, r) in reports {
        assert!(r.passed() && r.max_rel_error <= tol, "{op}/{}: rel error {:.3e} (worst {:?})", r.param, r.max_rel_error, r.worst);
    }
}

#[test]
fn every_op_double_precision() {
    let reports = check_ops::<f64>(1e-6).unwrap();
    assert_all(&reports, 1e-6);
    let names: std::collections::BTreeSet<_> = reports.iter().map(|(n, _)| *n).collect();
    assert_eq!(names.len(), op_cases::<f64>().len());
}

#[test]
fn every_op_single_precision() {
    assert_all(&check_ops::<f32>(1e-3).unwrap(), 1e-3);
}

#[test]
fn detach_blocks_gradient() {
    let mut s = ParamStore::<f64>::new();
    s.insert("x", probe_tensor(&[3, 4], 0.1), ParamGroup::Backbone).unwrap();
    let mut g = Graph::new();
    let x = g.param(&s, "x").unwrap();
    let d = g.detach(x);
    let y = g.mul(d, d).unwrap();
    let l = readout(&mut g, y).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(x).is_none_or(|v| v.iter().all(|g| *g == 0.0)));
}

fn objective_cases() -> Vec<(&'static str, HeadKind, Objective)> {
    let utts = common::target_utts(6, 11);
    vec![
        ("apc", HeadKind::Apc { shifts: vec![1, 2, 3] }, common::apc()),
        ("masked_predict", HeadKind::MaskedPredict { k: 8 }, common::masked_predict(&utts)),
        ("contrastive", HeadKind::Contrastive { dim: 64 }, common::contrastive()),
        ("ctc", HeadKind::Asr { vocab: common::vocab() }, Objective::Ctc),
    ]
}

/// Each loss through the desk model with adapters whose weights are
/// randomized, so the adapter path carries gradient both ways.
fn check_losses<F: draftlab_core::numerics::Scalar>(tol: f64, coords: usize) {
    let utt = &common::target_utts(1, 3)[0];
    for (name, head, objective) in objective_cases() {
        let mut model = common::desk(head, 1);
        model.insert_adapters(16, 2).unwrap();
        common::randomize(&mut model, "adapter", 0.2, 9);
        let reports = objective_gradcheck::<F>(&model, utt, &objective, 17, tol, coords).unwrap();
        assert!(reports.iter().any(|r| r.param.contains("adapter")));
        for r in &reports {
            assert!(r.passed(), "{name}/{}: rel error {:.3e} (worst {:?})", r.param, r.max_rel_error, r.worst);
        }
    }
}

#[test]
fn losses_double_precision() {
    check_losses::<f64>(1e-6, 6);
}

#[test]
fn losses_single_precision() {
    check_losses::<f32>(1e-3, 6);
}
