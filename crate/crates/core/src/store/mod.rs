//! Activation data: in-memory batches, the binary activation file format,
//! the synthetic low-rank generator and the shuffle buffer.

mod batch;
pub mod format;
mod shuffle;
mod synthetic;

use std::path::PathBuf;

pub use batch::ActivationBatch;
pub use format::{
    read_activations, write_activations, ActivationFileHeader, ActivationReader, ActivationWriter,
    HookPoint,
};
pub use shuffle::{MemoryRows, RowSource, ShuffleBuffer, ShuffledStream};
pub use synthetic::{generate_synthetic, parse_spectrum, SyntheticGenerator, SyntheticSpectrumSpec};

/// Environment variable that overrides [`default_data_dir`].
pub const DATA_DIR_ENV: &str = "SPARSEDICT_DATA_DIR";

/// Directory used for generated data when no explicit output path is given.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}
