//! Adam and SparseAdam.
//!
//! SparseAdam keeps one step counter per row and only touches rows whose
//! feature fired in the batch: moments, parameters and the counter of an idle
//! row stay bit-identical. When the row fires again its update is a normal
//! Adam step at that row's own step count, so no momentum accumulated while it
//! was idle can leak into it.

mod adam;
mod sae_optimizer;

pub use adam::{adam_step, sparse_adam_step, AdamConfig, DenseMoments, RowMoments, RowSparsityMask};
pub use sae_optimizer::{OptimizerKind, SaeOptimizer};
