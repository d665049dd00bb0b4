//! Desk-scale laboratory for residual-adapter domain adaptation of
//! self-supervised acoustic models.
//!
//! The training paradigm has three stages: self-supervised pretraining on a
//! source corpus, adaptation of inserted residual adapters (backbone frozen)
//! on the target corpus with the same self-supervised loss, and supervised
//! CTC finetuning of the whole model. Comparison regimes (finetune-only,
//! full-model adaptation, adapter-only finetuning, cross-corpus transfer) are
//! built from the same stage runner.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod asr;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};
