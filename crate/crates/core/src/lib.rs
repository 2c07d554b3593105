//! Sparse dictionary learning workbench.
//!
//! Two halves share one data model:
//!
//! * spectral analysis of activation dumps ([`spectra`]): streaming moments,
//!   covariance eigendecomposition, intrinsic dimension, and the split of
//!   attention-output variance into head-output and output-projection parts;
//! * TopK sparse autoencoders ([`sae`], [`optim`], [`trainer`]) with tied,
//!   active-subspace and random-subspace initialization, AuxK, Adam and
//!   SparseAdam.
//!
//! Activations travel as [`store::ActivationBatch`] values and are persisted in
//! a small little-endian f32 format (see [`store::format`]).

mod binio;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod report;
pub mod sae;
pub mod spectra;
pub mod store;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use store::{ActivationBatch, ActivationFileHeader, HookPoint};
