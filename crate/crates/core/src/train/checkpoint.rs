use std::path::Path;

use crate::archive::{Archive, NamedTensor, OptimizerBlock, RngState};
use crate::error::{Error, Result};
use crate::model::{AcousticModel, Architecture, ModelConfig};
use crate::numerics::{AdamState, ParamStore, Tensor};

/// Snapshot of a model plus optional optimizer and RNG state.
pub fn to_archive(model: &AcousticModel, step: u64, optimizer: Option<&AdamState<f32>>, rng: Option<RngState>) -> Result<Archive> {
    let tensors =
        model.store.iter().map(|(name, e)| NamedTensor { name: name.to_string(), group: e.group, tensor: plain(&e.tensor) }).collect();
    let optimizer = match optimizer {
        None => None,
        Some(state) => {
            let mut tensors = Vec::with_capacity(state.moments.len() * 2);
            for (name, (m, v)) in &state.moments {
                let entry = model
                    .store
                    .get(name)
                    .ok_or_else(|| Error::CheckpointContent(format!("optimizer state for unknown parameter {name}")))?;
                let shape = entry.tensor.shape().to_vec();
                for (suffix, data) in [("m", m), ("v", v)] {
                    tensors.push(NamedTensor {
                        name: format!("{name}.{suffix}"),
                        group: entry.group,
                        tensor: Tensor::new(shape.clone(), data.clone())?,
                    });
                }
            }
            Some(OptimizerBlock { t: state.t, config: state.config, tensors })
        }
    };
    Ok(Archive { step, tensors, counters: model.counters, optimizer, rng })
}

fn plain(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}

pub fn save_checkpoint(path: impl AsRef<Path>, archive: &Archive) -> Result<()> {
    archive.save(path)
}

fn store_of(archive: &Archive) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for t in &archive.tensors {
        store.insert(t.name.clone(), t.tensor.clone(), t.group)?;
    }
    Ok(store)
}

/// Rebuilds a model from an archive, inferring head and adapters. Fails if
/// the archive was written for a different `d_model`.
pub fn model_from_archive(archive: &Archive, config: &ModelConfig) -> Result<AcousticModel> {
    let store = store_of(archive)?;
    let arch = Architecture::infer(config, &store)?;
    let mut m = AcousticModel::from_parts(arch, store)?;
    m.counters = archive.counters;
    Ok(m)
}

/// Loads an archive into a model of exactly `expected` architecture.
/// Missing parameters are reported by name.
pub fn model_into(archive: &Archive, expected: &Architecture) -> Result<AcousticModel> {
    let store = store_of(archive)?;
    let mut m = AcousticModel::from_parts(expected.clone(), store)?;
    m.counters = archive.counters;
    Ok(m)
}

pub fn optimizer_from_archive(archive: &Archive) -> Result<Option<AdamState<f32>>> {
    let Some(block) = &archive.optimizer else {
        return Ok(None);
    };
    let mut state = AdamState::new(block.config);
    state.t = block.t;
    for pair in block.tensors.chunks(2) {
        let [m, v] = pair else {
            return Err(Error::CorruptCheckpoint("optimizer block has an unpaired moment".into()));
        };
        let name = m
            .name
            .strip_suffix(".m")
            .filter(|n| v.name.strip_suffix(".v") == Some(*n))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unexpected moment names {} / {}", m.name, v.name)))?;
        state.moments.insert(name.to_string(), (m.tensor.data().to_vec(), v.tensor.data().to_vec()));
    }
    Ok(Some(state))
}

pub fn load_checkpoint(path: impl AsRef<Path>, config: &ModelConfig) -> Result<(AcousticModel, Archive)> {
    let a = Archive::load(path)?;
    let m = model_from_archive(&a, config)?;
    Ok((m, a))
}
