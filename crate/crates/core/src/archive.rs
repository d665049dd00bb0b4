//! Binary tensor archive shared by checkpoints, codebooks and feature files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DRFT" | u32 version=1 | u64 step | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 group tag | u8 rank | u32 dims[rank] | f32 data
//! u32 update counters[4]            (Backbone, SslHead, Adapter, AsrHead)
//! u8 has_optimizer
//!   u64 t | f64 beta1 | f64 beta2 | f64 eps | u32 count | tensors as above
//! u8 has_rng
//!   [u8; 32] seed | u128 word position | u64 stream
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, ParamGroup, Tensor};

pub const MAGIC: &[u8; 4] = b"DRFT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlock {
    pub t: u64,
    pub config: AdamConfig,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub counters: [u32; 4],
    pub optimizer: Option<OptimizerBlock>,
    pub rng: Option<RngState>,
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::CheckpointFormat(format!("tensor name too long: {}", t.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.group.tag());
        let rank = u8::try_from(t.tensor.rank()).map_err(|_| Error::CheckpointFormat(format!("rank too large: {}", t.name)))?;
        out.push(rank);
        for d in t.tensor.shape() {
            let d = u32::try_from(*d).map_err(|_| Error::CheckpointFormat(format!("extent too large: {}", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

impl Archive {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_tensors(&mut out, &self.tensors)?;
        for c in self.counters {
            out.extend_from_slice(&c.to_le_bytes());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.t.to_le_bytes());
                out.extend_from_slice(&o.config.beta1.to_le_bytes());
                out.extend_from_slice(&o.config.beta2.to_le_bytes());
                out.extend_from_slice(&o.config.eps.to_le_bytes());
                put_tensors(&mut out, &o.tensors)?;
            }
        }
        match &self.rng {
            None => out.push(0),
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.seed);
                out.extend_from_slice(&r.word_pos.to_le_bytes());
                out.extend_from_slice(&r.stream.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::CheckpointFormat(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointFormat(format!("unsupported version {version} (expected {VERSION})")));
        }
        let step = r.u64()?;
        let tensors = r.tensors()?;
        let mut counters = [0u32; 4];
        for c in counters.iter_mut() {
            *c = r.u32()?;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                Some(OptimizerBlock { t, config, tensors: r.tensors()? })
            }
            f => return Err(Error::CorruptCheckpoint(format!("bad optimizer flag {f}"))),
        };
        let rng = match r.u8()? {
            0 => None,
            1 => {
                let mut seed = [0u8; 32];
                seed.copy_from_slice(r.take(32)?);
                let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
                let stream = r.u64()?;
                Some(RngState { seed, word_pos, stream })
            }
            f => return Err(Error::CorruptCheckpoint(format!("bad rng flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes after archive end", bytes.len() - r.pos)));
        }
        Ok(Self { step, tensors, counters, optimizer, rng })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32()? as usize;
        // every tensor needs at least 4 header bytes; reject absurd counts early
        if count > (self.bytes.len() - self.pos) / 4 {
            return Err(Error::CorruptCheckpoint(format!(
                "header declares {count} tensors but only {} bytes remain",
                self.bytes.len() - self.pos
            )));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let len = self.u16()? as usize;
            let name =
                std::str::from_utf8(self.take(len)?).map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?.to_string();
            let tag = self.u8()?;
            let group = ParamGroup::from_tag(tag).ok_or_else(|| Error::CorruptCheckpoint(format!("bad group tag {tag} for {name}")))?;
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = self.take(numel.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint(format!("extent overflow for {name}")))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            out.push(NamedTensor { name, group, tensor: Tensor::new(shape, data)? });
        }
        Ok(out)
    }
}
