//! TopK sparse autoencoder: parameters, TopK selection, forward pass, losses
//! with their analytic gradients, and initialization.
//!
//! ```text
//! z  = TopK(W_e x + b_e)
//! x̂  = W_d z + b_d
//! L  = mean ‖x − x̂‖² + α · mean ‖e − ê‖²      (second term: AuxK)
//! ```
//!
//! TopK keeps the k largest entries by signed value, ties going to the lower
//! index. During backprop the selected set is treated as fixed.

mod checkpoint;
mod init;
mod model;
mod params;
mod topk;

pub use checkpoint::{read_checkpoint, write_checkpoint, SaeCheckpoint};
pub use init::{init, DecoderBiasInit, InitScheme, InitSpec};
pub use model::{
    aux_forward, aux_loss, aux_loss_value, backward, forward, reconstruction_loss, residual,
    AuxForward, SaeForward, SaeGrads, DEFAULT_AUX_ALPHA,
};
pub use params::SaeParams;
pub use topk::{topk, topk_indices, topk_indices_masked};
