//! Training loop, dead-feature accounting, metrics and the scaling sweep.

mod config;
mod metrics;
mod source;
mod sweep;
mod tracker;
mod train;

pub use config::{AuxConfig, TrainConfig, FULL_SCALE_DEAD_WINDOW};
pub use metrics::{
    normalized_mse, normalized_mse_about, read_metrics_csv, write_metrics_csv, FinalMetrics,
    MetricsRecord, METRICS_COLUMNS,
};
pub use source::{DataSource, StreamSource};
pub use sweep::{
    read_sweep_csv, scaling_sweep, subspace_basis, write_sweep_csv, SweepCell, SweepVariant,
    RANDOM_BASIS_STREAM, SWEEP_COLUMNS,
};
pub use tracker::DeadFeatureTracker;
pub use train::{train, train_with_observer, RunStatus, StepEvent, TrainRun};
