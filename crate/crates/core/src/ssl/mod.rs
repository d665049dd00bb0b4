//! Self-supervised objectives: multi-shift future prediction, masked
//! pseudo-label prediction and masked contrastive prediction.

mod apc;
mod kmeans;
mod masked;

pub use apc::{apc_loss, apc_targets};
pub use kmeans::{kmeans_assign, kmeans_fit, subsample_labels, PseudoLabelCodebook};
pub use masked::{contrastive_loss, masked_indices, masked_predict_loss, ContrastiveLoss, MaskSpec};
