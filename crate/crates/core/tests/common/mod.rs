#![allow(dead_code)]

use std::sync::Arc;

use draftlab_core::data::{synth_generate, SyntheticDomainSpec, Tokenizer, Utterance};
use draftlab_core::model::{AcousticModel, HeadKind, ModelConfig};
use draftlab_core::numerics::Tensor;
use draftlab_core::ssl::{kmeans_fit, MaskSpec};
use draftlab_core::train::{NoamConfig, Objective, Scheduler};

pub fn target_utts(n: usize, seed: u64) -> Vec<Utterance> {
    synth_generate(&SyntheticDomainSpec::bundled_target(seed), n, &Tokenizer::default()).unwrap()
}

pub fn source_utts(n: usize, seed: u64) -> Vec<Utterance> {
    synth_generate(&SyntheticDomainSpec::bundled_source(seed), n, &Tokenizer::default()).unwrap()
}

pub fn vocab() -> usize {
    Tokenizer::default().vocab_size()
}

pub fn apc() -> Objective {
    Objective::Apc { shifts: vec![1, 2, 3] }
}

/// Masks dense enough that short utterances get masked steps.
pub fn mask() -> MaskSpec {
    MaskSpec { mask_prob: 0.3, span_len: 2, seed: 0 }
}

pub fn masked_predict(utts: &[Utterance]) -> Objective {
    let rows: Vec<Vec<f32>> = utts.iter().flat_map(|u| (0..u.frames()).map(|i| u.features.row(i).to_vec()).collect::<Vec<_>>()).collect();
    let frames = Tensor::from_rows(&rows).unwrap();
    Objective::MaskedPredict { codebook: Arc::new(kmeans_fit(&frames, 8, 10, 5).unwrap()), mask: mask() }
}

pub fn contrastive() -> Objective {
    Objective::Contrastive { mask: mask(), n_negatives: 4, temperature: 0.1 }
}

pub fn noam(steps_warmup: u64) -> Scheduler {
    Scheduler::Noam(NoamConfig { factor: 0.5, warmup_steps: steps_warmup, d_model: 64 })
}

pub fn desk(head: HeadKind, seed: u64) -> AcousticModel {
    AcousticModel::new(ModelConfig::desk(), head, seed).unwrap()
}

/// Overwrites every tensor whose name contains `needle` with seeded values
/// of scale `scale`.
pub fn randomize(model: &mut AcousticModel, needle: &str, scale: f32, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for (name, e) in model.store.iter_mut() {
        if name.contains(needle) {
            for v in e.tensor.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
}
