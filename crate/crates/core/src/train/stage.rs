use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::RngState;
use crate::asr::ctc_loss;
use crate::data::corpus::batch_indices;
use crate::data::{augment::spec_augment_with, speed_perturb, Utterance};
use crate::error::{Error, Result};
use crate::model::{derive_seed, AcousticModel, Architecture};
use crate::numerics::{adam_step, AdamState, Graph, GroupSet, ParamStore, Scalar, Tensor, Var};
use crate::ssl::{apc_loss, apc_targets, contrastive_loss, kmeans_assign, masked_predict_loss, subsample_labels};

use super::plan::{Objective, ObjectiveKind, Stage, StagePlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// What one stage did.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub objective: ObjectiveKind,
    pub trainable: GroupSet,
    pub steps: u64,
    /// Rows at the logging cadence (plus the first and last step).
    pub metrics: Vec<MetricRow>,
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
    /// Utterances skipped because they were too short for the objective.
    pub skipped: usize,
    /// Masked steps whose contrastive negatives were drawn with replacement.
    pub replacement_draws: usize,
    /// Scalar parameters the stage was allowed to update.
    pub updated_params: usize,
    pub optimizer: AdamState<f32>,
    pub rng: RngState,
}

impl StageReport {
    pub fn first_loss(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// `step<TAB>lr<TAB>loss` lines.
    pub fn metrics_tsv(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            let _ = writeln!(s, "{}\t{:e}\t{:.6}", m.step, m.lr, m.loss);
        }
        s
    }
}

/// Loss of one utterance under `objective`, or `None` when the utterance
/// is too short for it. Also returns the count of contrastive draws with
/// replacement.
pub fn utterance_loss<F: Scalar, R: Rng>(
    arch: &Architecture,
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    features: &Tensor<F>,
    transcript: &[usize],
    objective: &Objective,
    rng: &mut R,
) -> Result<Option<(Var, usize)>> {
    let frames = features.rows();
    let steps = match arch.config.output_len(frames) {
        Ok(s) => s,
        Err(Error::SequenceTooShort { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let x = g.input(features.clone());
    match objective {
        Objective::Apc { shifts } => {
            let mut targets = Vec::with_capacity(shifts.len());
            for n in shifts {
                match apc_targets(features, *n, arch.config.subsample) {
                    Ok((_, t)) => targets.push(t),
                    Err(Error::EmptyTarget { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            let enc = arch.encode(g, store, x, None)?;
            let preds = arch.apc_predictions(g, store, enc.hidden)?;
            Ok(Some((apc_loss(g, &preds, &targets)?, 0)))
        }
        Objective::MaskedPredict { codebook, mask } => {
            let frame_labels = kmeans_assign(codebook, &features.cast::<f32>())?;
            let labels = subsample_labels(&frame_labels, steps, arch.config.subsample);
            let m = mask.sample(steps, rng)?;
            let enc = arch.encode(g, store, x, Some(&m))?;
            let logits = arch.cluster_logits(g, store, enc.hidden)?;
            Ok(Some((masked_predict_loss(g, logits, &labels, &m)?, 0)))
        }
        Objective::Contrastive { mask, n_negatives, temperature } => {
            if steps < 2 {
                return Ok(None);
            }
            let m = mask.sample(steps, rng)?;
            let enc = arch.encode(g, store, x, Some(&m))?;
            let (ctx, tgt) = arch.contrastive_pair(g, store, &enc)?;
            let out = contrastive_loss(g, ctx, tgt, &m, *n_negatives, *temperature, rng)?;
            Ok(Some((out.loss, out.replacement_draws)))
        }
        Objective::Ctc => {
            if !crate::asr::feasible(steps, transcript) {
                return Ok(None);
            }
            let enc = arch.encode(g, store, x, None)?;
            let lp = arch.asr_log_probs(g, store, enc.hidden)?;
            Ok(Some((ctc_loss(g, lp, transcript)?, 0)))
        }
    }
}

/// Loss of one utterance with any stop-gradient branch pinned to its value
/// at `anchor`, so the loss is an ordinary function of the parameters that
/// a finite difference can probe. Only the contrastive targets are detached.
#[allow(clippy::too_many_arguments)]
fn held_loss<F: Scalar>(
    arch: &Architecture,
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    anchor: &ParamStore<F>,
    features: &Tensor<F>,
    transcript: &[usize],
    objective: &Objective,
    seed: u64,
) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Objective::Contrastive { mask, n_negatives, temperature } = objective {
        let steps = arch.config.output_len(features.rows())?;
        let m = mask.sample(steps, &mut rng)?;
        let fixed = {
            let mut g0 = Graph::new();
            let x = g0.input(features.clone());
            let enc = arch.encode(&mut g0, anchor, x, Some(&m))?;
            g0.value(enc.frontend).clone()
        };
        let x = g.input(features.clone());
        let mut enc = arch.encode(g, store, x, Some(&m))?;
        enc.frontend = g.input(fixed);
        let (ctx, tgt) = arch.contrastive_pair(g, store, &enc)?;
        return Ok(contrastive_loss(g, ctx, tgt, &m, *n_negatives, *temperature, &mut rng)?.loss);
    }
    utterance_loss(arch, g, store, features, transcript, objective, &mut rng)?
        .map(|(l, _)| l)
        .ok_or_else(|| Error::Precondition("utterance too short for the objective".into()))
}

/// Gradient check of `objective` on one utterance: the autodiff gradient in
/// precision `F` against a double-precision central difference, for every
/// trainable parameter of `model` (up to `coords` coordinates each). Random
/// draws are reseeded for every evaluation so masks and negatives agree.
pub fn objective_gradcheck<F: Scalar>(
    model: &AcousticModel,
    utt: &Utterance,
    objective: &Objective,
    seed: u64,
    tol: f64,
    coords: usize,
) -> Result<Vec<crate::numerics::GradCheckReport>> {
    let store = model.store.cast::<F>();
    let wide_anchor = model.store.cast::<f64>();
    let features = utt.features.cast::<F>();
    let wide_features = utt.features.cast::<f64>();
    let arch = &model.arch;
    let t = &utt.transcript;
    crate::numerics::gradcheck::reference_check(
        &store,
        |g, s| held_loss(arch, g, s, &store, &features, t, objective, seed),
        |g, s| held_loss(arch, g, s, &wide_anchor, &wide_features, t, objective, seed),
        tol,
        coords,
    )
}

fn augmented(u: &Utterance, plan: &StagePlan, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let Some(a) = &plan.augment else {
        return Ok(u.features.clone());
    };
    let mut f = if a.speed_factors.is_empty() {
        u.features.clone()
    } else {
        let factor = a.speed_factors[rng.random_range(0..a.speed_factors.len())];
        speed_perturb(&u.features, factor)?
    };
    f = spec_augment_with(&f, &a.spec, rng);
    Ok(f)
}

/// Mean loss of `utts` under `objective` without updating anything.
pub fn evaluate_loss(model: &AcousticModel, utts: &[&Utterance], objective: &Objective, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut n = 0usize;
    for u in utts {
        let mut g = Graph::new();
        if let Some((l, _)) = utterance_loss(&model.arch, &mut g, &model.store, &u.features, &u.transcript, objective, &mut rng)? {
            total += g.scalar(l) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Precondition("no utterance is long enough for the objective".into()));
    }
    Ok(total / n as f64)
}

/// Trains the groups in `plan.trainable` for `plan.steps` updates.
///
/// Every other parameter is frozen: it receives no gradient and the
/// optimizer skips it, so it is bit-identical afterwards.
pub fn run_stage(model: &mut AcousticModel, plan: &StagePlan, data: &[Utterance]) -> Result<StageReport> {
    plan.validate()?;
    if !plan.objective.matches_head(&model.arch.head) {
        return Err(Error::Config(format!("{} objective does not match the model's {} head", plan.objective.kind(), model.arch.head)));
    }
    let absent: Vec<&str> = plan.trainable.iter().filter(|g| !model.store.has_group(*g)).map(|g| g.name()).collect();
    if !absent.is_empty() {
        return Err(Error::Config(format!("{} stage trains {} but the model has no such parameters", plan.stage, absent.join(", "))));
    }
    if data.is_empty() {
        return Err(Error::Config(format!("{} stage has an empty corpus", plan.stage)));
    }

    model.store.set_trainable(plan.trainable);
    model.store.zero_grads();
    let mut adam = AdamState::new(plan.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, "stage"));
    let mut report = StageReport {
        stage: plan.stage,
        objective: plan.objective.kind(),
        trainable: plan.trainable,
        steps: plan.steps,
        metrics: Vec::new(),
        losses: Vec::with_capacity(plan.steps as usize),
        skipped: 0,
        replacement_draws: 0,
        updated_params: model.store.count_trainable(),
        optimizer: AdamState::new(plan.adam),
        rng: rng_state(&rng),
    };

    let mut epoch = 0u64;
    let mut batches = batch_indices(data, plan.batch_size, derive_seed(plan.seed, "epoch0"), false)?.into_iter();
    let result = (|| -> Result<()> {
        for step in 1..=plan.steps {
            let batch = match batches.next() {
                Some(b) => b,
                None => {
                    epoch += 1;
                    batches = batch_indices(data, plan.batch_size, derive_seed(plan.seed, &format!("epoch{epoch}")), false)?.into_iter();
                    batches.next().expect("non-empty corpus")
                }
            };
            let scale = 1.0 / batch.len() as f32;
            let mut loss_sum = 0.0f64;
            let mut used = 0usize;
            for &i in &batch {
                let u = &data[i];
                let feats = augmented(u, plan, &mut rng)?;
                let mut g = Graph::new();
                let out = utterance_loss(&model.arch, &mut g, &model.store, &feats, &u.transcript, &plan.objective, &mut rng)?;
                let Some((loss, draws)) = out else {
                    report.skipped += 1;
                    continue;
                };
                report.replacement_draws += draws;
                let value = g.scalar(loss) as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite { step, batch_ids: batch.iter().map(|j| data[*j].id.clone()).collect() });
                }
                loss_sum += value;
                used += 1;
                let scaled = g.scale(loss, scale)?;
                g.backward_into(scaled, &mut model.store)?;
            }
            let lr = plan.scheduler.lr(step)?;
            // A zero rate (the end of a linear decay) leaves parameters as they are.
            if lr > 0.0 {
                adam_step(&mut model.store, &mut adam, lr)?;
            }
            model.store.zero_grads();
            let mean = if used > 0 { loss_sum / used as f64 } else { f64::NAN };
            report.losses.push(mean);
            if step == 1 || step % plan.log_every == 0 || step == plan.steps {
                report.metrics.push(MetricRow { step, lr, loss: mean });
            }
        }
        Ok(())
    })();
    model.store.set_trainable(GroupSet::ALL);
    result?;
    report.optimizer = adam;
    report.rng = rng_state(&rng);
    for g in plan.trainable.iter() {
        model.counters[g.tag() as usize] += 1;
    }
    Ok(report)
}

pub fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState { seed: rng.get_seed(), word_pos: rng.get_word_pos(), stream: rng.get_stream() }
}

pub fn restore_rng(state: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}
