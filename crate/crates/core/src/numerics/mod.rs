//! Tensors, reverse-mode differentiation, parameter bookkeeping and Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, CheckStatus, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{parse_group_filter, GroupSet, ParamEntry, ParamGroup, ParamStore};
pub use scalar::Scalar;
pub use tensor::{bit_identical, Tensor};
