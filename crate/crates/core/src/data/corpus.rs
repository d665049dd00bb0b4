//! Utterances, padded batches and on-disk corpus manifests.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{Archive, NamedTensor};
use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, Tensor};

use super::features::{LogMel, N_MELS};
use super::synth::{synth_generate, SyntheticDomainSpec};
use super::wav::read_wav;
use super::Tokenizer;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T×80` log-mel frames.
    pub features: Tensor<f32>,
    /// Token ids; empty for unlabeled data.
    pub transcript: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Train/dev/test splits of one named corpus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub name: String,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    /// Generates the three splits from one spec with split-specific seeds.
    pub fn synthetic(name: &str, spec: &SyntheticDomainSpec, sizes: [usize; 3], tokenizer: &Tokenizer) -> Result<Self> {
        let split = |k: u64, n: usize| -> Result<Vec<Utterance>> {
            if n == 0 {
                return Ok(Vec::new());
            }
            let mut utts = synth_generate(&spec.with_seed(split_seed(spec.seed, k)), n, tokenizer)?;
            let tag = ["train", "dev", "test"][k as usize];
            for u in &mut utts {
                u.id = format!("{}-{}", tag, u.id);
            }
            Ok(utts)
        };
        Ok(Self { name: name.to_string(), train: split(0, sizes[0])?, dev: split(1, sizes[1])?, test: split(2, sizes[2])? })
    }
}

fn split_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Zero-padded batch of utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `B×T_max×80`, zero beyond each item's length.
    pub features: Tensor<f32>,
    pub feature_lengths: Vec<usize>,
    /// `B×L_max` token ids, zero-padded.
    pub tokens: Vec<usize>,
    pub token_lengths: Vec<usize>,
    /// `B×T_max`, true at real frames.
    pub padding_mask: Vec<bool>,
}

impl Batch {
    pub fn from_utterances(utts: &[&Utterance]) -> Result<Self> {
        let t_max = utts.iter().map(|u| u.frames()).max().unwrap_or(0);
        let l_max = utts.iter().map(|u| u.transcript.len()).max().unwrap_or(0);
        let b = utts.len();
        let mut feats = vec![0.0f32; b * t_max * N_MELS];
        let mut tokens = vec![0usize; b * l_max];
        let mut mask = vec![false; b * t_max];
        for (i, u) in utts.iter().enumerate() {
            if u.features.last_dim() != N_MELS {
                return Err(Error::Dimension { op: "batch", lhs: u.features.shape().to_vec(), rhs: vec![N_MELS] });
            }
            let n = u.features.numel();
            feats[i * t_max * N_MELS..i * t_max * N_MELS + n].copy_from_slice(u.features.data());
            tokens[i * l_max..i * l_max + u.transcript.len()].copy_from_slice(&u.transcript);
            mask[i * t_max..i * t_max + u.frames()].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self {
            ids: utts.iter().map(|u| u.id.clone()).collect(),
            features: Tensor::new(vec![b, t_max, N_MELS], feats)?,
            feature_lengths: utts.iter().map(|u| u.frames()).collect(),
            tokens,
            token_lengths: utts.iter().map(|u| u.transcript.len()).collect(),
            padding_mask: mask,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    /// Unpadded `T_i×80` features of item `i`.
    pub fn item_features(&self, i: usize) -> Tensor<f32> {
        let t_max = self.max_frames();
        let len = self.feature_lengths[i];
        let start = i * t_max * N_MELS;
        Tensor::new(vec![len, N_MELS], self.features.data()[start..start + len * N_MELS].to_vec()).expect("batch layout")
    }

    pub fn item_tokens(&self, i: usize) -> &[usize] {
        let l_max = self.tokens.len() / self.len().max(1);
        &self.tokens[i * l_max..i * l_max + self.token_lengths[i]]
    }
}

/// Partitions `utts` into batches; each utterance appears exactly once.
///
/// Without sorting the utterance order is a seeded shuffle. With sorting,
/// utterances are ordered by frame count (ties by a seeded shuffle) so each
/// batch holds similar lengths. The final batch may be short.
pub fn make_batches(utts: &[Utterance], batch_size: usize, seed: u64, sort_by_length: bool) -> Result<Vec<Batch>> {
    batch_indices(utts, batch_size, seed, sort_by_length)?
        .iter()
        .map(|idx| Batch::from_utterances(&idx.iter().map(|i| &utts[*i]).collect::<Vec<_>>()))
        .collect()
}

/// Index form of [`make_batches`].
pub fn batch_indices(utts: &[Utterance], batch_size: usize, seed: u64, sort_by_length: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if utts.is_empty() {
        return Err(Error::Config("cannot batch an empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if sort_by_length {
        order.sort_by_key(|i| utts[*i].frames());
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One manifest record: `id<TAB>path<TAB>transcript`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub transcript: String,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(path)) = (fields.next(), fields.next()) else {
            return Err(Error::Config(format!("manifest line {}: expected id<TAB>path<TAB>transcript", n + 1)));
        };
        let transcript = fields.next().unwrap_or("").to_string();
        let path = Path::new(path);
        out.push(ManifestEntry {
            id: id.to_string(),
            path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
            transcript,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Loads a manifest's utterances: `.wav` paths go through the log-mel
/// extractor, anything else is read as a feature archive.
pub fn load_manifest(path: impl AsRef<Path>, extractor: &LogMel, tokenizer: &Tokenizer) -> Result<Vec<Utterance>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let is_wav = e.path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
            let features = if is_wav {
                let audio = read_wav(&e.path)?;
                if audio.sample_rate != extractor.config().sample_rate {
                    return Err(Error::UnsupportedFormat(format!(
                        "sample_rate = {} in {} (expected {})",
                        audio.sample_rate,
                        e.path.display(),
                        extractor.config().sample_rate
                    )));
                }
                extractor.extract(&audio.samples)?
            } else {
                read_features(&e.path)?
            };
            Ok(Utterance { transcript: tokenizer.tokenize(&e.transcript)?, id: e.id, features })
        })
        .collect()
}

pub fn write_features(path: impl AsRef<Path>, features: &Tensor<f32>) -> Result<()> {
    Archive {
        tensors: vec![NamedTensor { name: "features".into(), group: ParamGroup::Backbone, tensor: features.clone() }],
        ..Default::default()
    }
    .save(path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let a = Archive::load(path)?;
    let t = a.get("features").ok_or_else(|| Error::Corrupt(format!("{} holds no features tensor", path.display())))?;
    if t.tensor.rank() != 2 || t.tensor.last_dim() != N_MELS {
        return Err(Error::Corrupt(format!("{}: features must be T×{N_MELS}, got {:?}", path.display(), t.tensor.shape())));
    }
    Ok(t.tensor.clone())
}

/// Writes utterances as feature files plus a manifest, and the generating
/// spec as a sidecar `spec.txt`.
pub fn write_synthetic_split(
    dir: impl AsRef<Path>,
    split: &str,
    spec: &SyntheticDomainSpec,
    utts: &[Utterance],
    tokenizer: &Tokenizer,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join(split);
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = String::new();
    for u in utts {
        let rel = format!("{split}/{}.feats", u.id);
        write_features(dir.join(&rel), &u.features)?;
        manifest.push_str(&format!("{}\t{}\t{}\n", u.id, rel, tokenizer.detokenize(&u.transcript)?));
    }
    let mpath = dir.join(format!("{split}.tsv"));
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let spath = dir.join("spec.txt");
    std::fs::write(&spath, spec.to_text()).map_err(|e| Error::io(&spath, e))?;
    Ok(mpath)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, frames: usize) -> Utterance {
        Utterance { id: id.into(), features: Tensor::full(&[frames, N_MELS], 1.0), transcript: vec![1; frames % 3] }
    }

    #[test]
    fn ten_by_three() {
        let utts: Vec<_> = (0..10).map(|i| utt(&format!("u{i}"), 5 + i)).collect();
        for sort in [false, true] {
            let b = make_batches(&utts, 3, 1, sort).unwrap();
            let sizes: Vec<_> = b.iter().map(Batch::len).collect();
            assert_eq!(sizes, [3, 3, 3, 1]);
        }
    }

    #[test]
    fn equal_lengths_have_no_padding() {
        let utts: Vec<_> = (0..4).map(|i| utt(&format!("u{i}"), 7)).collect();
        let b = make_batches(&utts, 4, 0, false).unwrap();
        assert!(b[0].padding_mask.iter().all(|m| *m));
    }

    #[test]
    fn padding_is_zero_and_masked() {
        let utts = [utt("a", 3), utt("b", 5)];
        let b = Batch::from_utterances(&[&utts[0], &utts[1]]).unwrap();
        assert_eq!(b.features.shape(), &[2, 5, N_MELS]);
        assert!(b.features.data()[3 * N_MELS..5 * N_MELS].iter().all(|v| *v == 0.0));
        assert_eq!(&b.padding_mask[..5], &[true, true, true, false, false]);
        assert_eq!(b.item_features(0), utts[0].features);
    }

    #[test]
    fn seeded_composition_repeats() {
        let utts: Vec<_> = (0..9).map(|i| utt(&format!("u{i}"), 4 + i % 4)).collect();
        let ids = |s| make_batches(&utts, 2, s, false).unwrap().into_iter().map(|b| b.ids).collect::<Vec<_>>();
        assert_eq!(ids(5), ids(5));
        assert_ne!(ids(5), ids(6));
    }

    #[test]
    fn errors() {
        assert!(make_batches(&[], 2, 0, false).is_err());
        assert!(make_batches(&[utt("a", 3)], 0, 0, false).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("u1\tx.wav\thello\nu2\t/abs/y.feats\t\n\n", Path::new("/base")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, Path::new("/base/x.wav"));
        assert_eq!(m[1].transcript, "");
        assert!(parse_manifest("only-id\n", Path::new(".")).is_err());
    }
}
