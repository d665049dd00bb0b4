//! Audio ingestion, features, augmentation, tokenization, batching and the
//! synthetic two-domain corpus.

pub mod augment;
pub mod corpus;
pub mod features;
pub mod synth;
mod tokenizer;
pub mod wav;

pub use augment::{spec_augment, speed_perturb, SpecAugmentConfig};
pub use corpus::{load_manifest, make_batches, Batch, Corpus, Utterance};
pub use features::{log_mel, FeatureConfig, LogMel, N_MELS};
pub use synth::{synth_generate, SymbolTemplate, SyntheticDomainSpec};
pub use tokenizer::{Tokenizer, DEFAULT_ALPHABET};
pub use wav::read_wav;
