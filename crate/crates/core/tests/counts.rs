//! Updated-parameter accounting of the full-size model.

use draftlab_core::model::{count_layout, AcousticModel, HeadKind, ModelConfig};
use draftlab_core::numerics::{GroupSet, ParamGroup};

/// LayerNorm gain and bias, down projection with bias, up projection with bias.
fn adapter_oracle(d_model: usize, d_ada: usize) -> usize {
    2 * d_model + d_model * d_ada + d_ada + d_ada * d_model + d_model
}

#[test]
fn paper_adapter_totals() {
    let cfg = ModelConfig::paper();
    let head = HeadKind::Apc { shifts: vec![1, 2, 3, 4] };
    let adapters = GroupSet::of(&[ParamGroup::Adapter]);
    let expected_millions = [0.9, 1.7, 3.4, 6.8, 13.7, 27.3];
    let expected_percent = [2.0, 4.0, 9.0, 17.0, 35.0, 70.0];
    let saft = count_layout(&cfg, &head, None, GroupSet::of(&[ParamGroup::Backbone, ParamGroup::SslHead]));
    assert_eq!((saft as f64 / 1e5).round() / 10.0, 39.2);
    for (i, d) in [64usize, 128, 256, 512, 1024, 2048].into_iter().enumerate() {
        let n = count_layout(&cfg, &head, Some(d), adapters);
        assert_eq!(n, 13 * adapter_oracle(512, d), "d_ada {d}");
        assert_eq!((n as f64 / 1e5).round() / 10.0, expected_millions[i], "d_ada {d}");
        let pct = 100.0 * n as f64 / saft as f64;
        assert!((pct - expected_percent[i]).abs() <= 1.0, "d_ada {d}: {pct:.1}%");
    }
    assert_eq!(count_layout(&cfg, &head, Some(64), adapters), 872_768);
    assert_eq!(count_layout(&cfg, &head, Some(2048), adapters), 27_309_568);
}

#[test]
fn materialized_desk_model_matches_layout() {
    let cfg = ModelConfig::desk();
    let head = HeadKind::Apc { shifts: vec![1, 2, 3] };
    let mut m = AcousticModel::<f32>::new(cfg.clone(), head.clone(), 0).unwrap();
    m.insert_adapters(32, 1).unwrap();
    for g in [ParamGroup::Backbone, ParamGroup::SslHead, ParamGroup::Adapter] {
        let set = GroupSet::of(&[g]);
        assert_eq!(m.count_params(set), count_layout(&cfg, &head, Some(32), set), "{g:?}");
    }
    assert_eq!(m.count_params(GroupSet::of(&[ParamGroup::Adapter])), 5 * adapter_oracle(64, 32));
}
