//! Spectral analysis of activations.
//!
//! All "singular values" reported here follow one convention: σ_i/√(n−1) of
//! the mean-centered data, i.e. square roots of the unbiased covariance
//! eigenvalues. They do not depend on the sample count.

mod basis;
mod decomposition;
mod eigen;
mod moments;
mod report;

pub use basis::{random_subspace, top_subspace, BasisSource, ProjectionBasis};
pub use decomposition::{principal_directions, variance_decomposition, VarianceDecomposition};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use moments::StreamingMoments;
pub use report::{count_above_fraction, intrinsic_dimension, spectrum, CovarianceEigen, SpectrumReport};

/// Thresholds of the standard intrinsic-dimension sweep.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 0.9, 0.99, 0.999, 0.9999];
/// Fractions of the leading singular value used for above-fraction counts.
pub const DEFAULT_FRACTIONS: [f64; 1] = [0.05];
