//! Encoder structure: causality, padding invariance and adapter passthrough.

mod common;

use draftlab_core::model::{HeadKind, ModelConfig};
use draftlab_core::numerics::gradcheck::readout;
use draftlab_core::numerics::{bit_identical, Graph, Tensor};
use draftlab_core::train::{evaluate_loss, Objective};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Gradient of a fixed weighted sum of encoder output row `t` w.r.t. every raw input frame.
fn input_gradient(model: &draftlab_core::model::AcousticModel<f64>, x: &Tensor<f64>, t: usize) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let enc = model.arch.encode(&mut g, &model.store, xv, None).unwrap();
    let row = g.rows(enc.hidden, &[t]).unwrap();
    // a plain sum of a layer-normalized row is constant
    let l = readout(&mut g, row).unwrap();
    g.backward(l).unwrap().get(xv).unwrap().to_vec()
}

#[test]
fn causal_outputs_ignore_future_frames() {
    let mut model = common::desk(HeadKind::Apc { shifts: vec![1, 2, 3] }, 4);
    model.insert_adapters(16, 5).unwrap();
    common::randomize(&mut model, "adapter", 0.2, 6);
    let model = draftlab_core::model::AcousticModel::from_parts(model.arch.clone(), model.store.cast::<f64>()).unwrap();
    let cfg = model.config().clone();
    assert!(cfg.causal);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = 96;
    let x = random_tensor(frames, cfg.in_dim, &mut rng);
    let steps = cfg.output_len(frames).unwrap();
    let mut pairs = 0;
    while pairs < 50 {
        let t = rng.random_range(0..steps - 1);
        let end = cfg.receptive_end(t);
        if end + 1 >= frames {
            continue;
        }
        let future = rng.random_range(end + 1..frames);
        let grad = input_gradient(&model, &x, t);
        let row = &grad[future * cfg.in_dim..(future + 1) * cfg.in_dim];
        assert!(row.iter().all(|v| *v == 0.0), "step {t} depends on frame {future}");
        let visible = &grad[..(end + 1) * cfg.in_dim];
        assert!(visible.iter().any(|v| *v != 0.0), "probe is vacuous at step {t}");
        pairs += 1;
    }
}

#[test]
fn causal_encoder_steps_ignore_later_steps() {
    let model = common::desk(HeadKind::Apc { shifts: vec![1] }, 2);
    let store = model.store.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = 20;
    let x = random_tensor(steps, 64, &mut rng);
    for _ in 0..50 {
        let t = rng.random_range(0..steps - 1);
        let later = rng.random_range(t + 1..steps);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let h = model.arch.encoder(&mut g, &store, xv, steps).unwrap();
        let row = g.rows(h, &[t]).unwrap();
        let l = readout(&mut g, row).unwrap();
        let grads = g.backward(l).unwrap();
        let gx = grads.get(xv).unwrap();
        assert!(gx[later * 64..(later + 1) * 64].iter().all(|v| *v == 0.0), "step {t} sees step {later}");
        assert!(gx[t * 64..(t + 1) * 64].iter().any(|v| *v != 0.0));
    }
}

#[test]
fn padding_does_not_change_real_steps() {
    let cfg = ModelConfig { causal: false, ..ModelConfig::desk() };
    let model = draftlab_core::model::AcousticModel::<f64>::new(cfg, HeadKind::Apc { shifts: vec![1] }, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for valid in [5, 12, 19] {
        let x = random_tensor(valid, 64, &mut rng);
        let run = |t: &Tensor<f64>| {
            let mut g = Graph::new();
            let xv = g.input(t.clone());
            let h = model.arch.encoder(&mut g, &model.store, xv, valid).unwrap();
            g.value(h).clone()
        };
        let base = run(&x);
        for pad in [1, 7] {
            let mut data = x.data().to_vec();
            data.extend((0..pad * 64).map(|_| rng.random_range(-5.0..5.0)));
            let padded = run(&Tensor::new(vec![valid + pad, 64], data).unwrap());
            for (a, b) in base.data().iter().zip(&padded.data()[..valid * 64]) {
                assert!((a - b).abs() <= 1e-5, "valid {valid}, pad {pad}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn fresh_adapters_pass_through_on_32_batches() {
    let utts = common::target_utts(64, 21);
    let cases = [
        (HeadKind::Apc { shifts: vec![1, 2, 3] }, common::apc()),
        (HeadKind::MaskedPredict { k: 8 }, common::masked_predict(&utts)),
        (HeadKind::Contrastive { dim: 64 }, common::contrastive()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (head, objective) in cases {
        let before = common::desk(head, 23);
        let mut after = before.clone();
        after.insert_adapters(32, 24).unwrap();
        for b in 0..32 {
            let batch: Vec<_> = sample(&mut rng, utts.len(), 4).into_iter().map(|i| &utts[i]).collect();
            for u in &batch {
                assert!(bit_identical(&before.encode_tensor(&u.features).unwrap(), &after.encode_tensor(&u.features).unwrap()));
            }
            let l0 = evaluate_loss(&before, &batch, &objective, b).unwrap();
            let l1 = evaluate_loss(&after, &batch, &objective, b).unwrap();
            assert_eq!(l0.to_bits(), l1.to_bits(), "{} batch {b}", objective.kind());
        }
    }
    let mut asr = common::desk(HeadKind::Asr { vocab: common::vocab() }, 25);
    let before = asr.clone();
    asr.insert_adapters(8, 26).unwrap();
    let batch: Vec<_> = utts.iter().take(4).collect();
    assert_eq!(
        evaluate_loss(&before, &batch, &Objective::Ctc, 0).unwrap().to_bits(),
        evaluate_loss(&asr, &batch, &Objective::Ctc, 0).unwrap().to_bits()
    );
}

#[test]
fn ffn_branch_placement_also_passes_through() {
    let cfg = ModelConfig { adapter_placement: draftlab_core::model::AdapterPlacement::FfnBranch, ..ModelConfig::desk() };
    let before = draftlab_core::model::AcousticModel::<f32>::new(cfg, HeadKind::Apc { shifts: vec![1] }, 1).unwrap();
    let mut after = before.clone();
    after.insert_adapters(8, 2).unwrap();
    let u = &common::target_utts(1, 1)[0];
    assert!(bit_identical(&before.encode_tensor(&u.features).unwrap(), &after.encode_tensor(&u.features).unwrap()));
}
