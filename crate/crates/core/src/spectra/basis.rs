use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, gaussian_orthonormal};
use crate::spectra::{CovarianceEigen, StreamingMoments};

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    TopSingular,
    RandomOrthonormal,
    Supplied,
}

impl BasisSource {
    pub fn label(self) -> &'static str {
        match self {
            BasisSource::TopSingular => "top-singular",
            BasisSource::RandomOrthonormal => "random-orthonormal",
            BasisSource::Supplied => "supplied",
        }
    }
}

/// `d × m` matrix with orthonormal columns, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    d: usize,
    m: usize,
    columns: Vec<f64>,
    source: BasisSource,
}

impl ProjectionBasis {
    /// Validates `columnsᵀ·columns = I` to within 1e-6 per entry.
    pub fn new(d: usize, m: usize, columns: Vec<f64>, source: BasisSource) -> Result<Self> {
        if m == 0 || m > d {
            return Err(Error::invalid(format!("basis width {m} outside 1..={d}")));
        }
        if columns.len() != d * m {
            return Err(Error::DimensionMismatch {
                what: "basis storage",
                expected: d * m,
                found: columns.len(),
            });
        }
        let basis = Self {
            d,
            m,
            columns,
            source,
        };
        let err = basis.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(Error::Numeric(format!(
                "basis columns are not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn source(&self) -> BasisSource {
        self.source
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.d..(j + 1) * self.d]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.chunks_exact(self.d)
    }

    /// Max absolute entry of `BᵀB − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.m {
            for q in p..self.m {
                let want = if p == q { 1.0 } else { 0.0 };
                let v: f64 = dot(self.column(p), self.column(q));
                worst = worst.max((v - want).abs());
            }
        }
        worst
    }

    /// Row-major `P = B·Bᵀ`.
    pub fn projector(&self) -> Vec<f64> {
        let d = self.d;
        let mut p = vec![0.0; d * d];
        for col in self.columns() {
            for r in 0..d {
                let cr = col[r];
                for c in 0..d {
                    p[r * d + c] += cr * col[c];
                }
            }
        }
        p
    }

    /// Coefficients `Bᵀx`.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        self.columns().map(|c| dot(c, x)).collect()
    }

    /// `‖(I − BBᵀ)x‖`.
    pub fn out_of_span_norm(&self, x: &[f64]) -> f64 {
        let mut r = x.to_vec();
        for col in self.columns() {
            let a = dot(col, x);
            for (ri, ci) in r.iter_mut().zip(col) {
                *ri -= a * ci;
            }
        }
        dot(&r, &r).sqrt()
    }
}

/// Makes the largest-magnitude entry positive (first such entry on ties).
fn fix_sign(col: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

impl CovarianceEigen {
    /// The `m` leading eigenvectors, sign-normalized.
    pub fn top_subspace(&self, m: usize) -> Result<ProjectionBasis> {
        let d = self.d();
        if m == 0 || m > d {
            return Err(Error::invalid(format!("subspace width {m} outside 1..={d}")));
        }
        let mut columns = self.eigen.vectors[..m * d].to_vec();
        columns.chunks_exact_mut(d).for_each(fix_sign);
        ProjectionBasis::new(d, m, columns, BasisSource::TopSingular)
    }
}

/// Leading `m` principal directions of the accumulated data.
///
/// When eigenvalue `m` ties with eigenvalue `m+1` the split is arbitrary;
/// only the projector is meaningful then.
pub fn top_subspace(moments: &StreamingMoments, m: usize) -> Result<ProjectionBasis> {
    if m == 0 || m > moments.d() {
        return Err(Error::invalid(format!(
            "subspace width {m} outside 1..={}",
            moments.d()
        )));
    }
    CovarianceEigen::from_moments(moments)?.top_subspace(m)
}

/// Orthonormalized Gaussian `d × m` basis, deterministic in `seed`.
pub fn random_subspace(d: usize, m: usize, seed: u64) -> Result<ProjectionBasis> {
    if m == 0 || m > d {
        return Err(Error::invalid(format!("subspace width {m} outside 1..={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = gaussian_orthonormal(&mut rng, d, m)?;
    ProjectionBasis::new(d, m, columns, BasisSource::RandomOrthonormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ActivationBatch;

    fn frob(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn rank_one_axis_is_sign_fixed() {
        let rows: Vec<[f32; 3]> = (0..6).map(|i| [-(i as f32) + 2.5, 0.0, 0.0]).collect();
        let m = StreamingMoments::from_batch(&ActivationBatch::from_rows(&rows).unwrap());
        let b = top_subspace(&m, 1).unwrap();
        assert_eq!(b.source(), BasisSource::TopSingular);
        assert!((b.column(0)[0] - 1.0).abs() < 1e-12);
        assert!(b.column(0)[1].abs() < 1e-12 && b.column(0)[2].abs() < 1e-12);
    }

    #[test]
    fn identity_covariance_full_width() {
        let b = ActivationBatch::from_rows(&[[1.0f32, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
            .unwrap();
        let basis = top_subspace(&StreamingMoments::from_batch(&b), 2).unwrap();
        assert!(basis.orthonormality_error() < 1e-12);
        assert!(frob(&basis.projector(), &[1.0, 0.0, 0.0, 1.0]) < 1e-12);
    }

    #[test]
    fn width_out_of_range() {
        let b = ActivationBatch::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let m = StreamingMoments::from_batch(&b);
        assert!(top_subspace(&m, 0).is_err());
        assert!(top_subspace(&m, 3).is_err());
        assert!(random_subspace(4, 5, 0).is_err());
        assert!(random_subspace(4, 0, 0).is_err());
    }

    #[test]
    fn random_bases() {
        let full = random_subspace(6, 6, 1).unwrap();
        assert!(full.orthonormality_error() < 1e-6);
        let a = random_subspace(64, 16, 1).unwrap();
        let b = random_subspace(64, 16, 2).unwrap();
        assert!(frob(&a.columns, &b.columns) > 0.0);
        assert_eq!(a, random_subspace(64, 16, 1).unwrap());
        for col in a.columns() {
            assert!((dot(col, col).sqrt() - 1.0).abs() < 1e-9);
        }
        let p = a.projector();
        let d = 64;
        let mut pp = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                pp[r * d + c] = (0..d).map(|k| p[r * d + k] * p[k * d + c]).sum();
            }
        }
        assert!(frob(&pp, &p) <= 1e-5);
    }

    #[test]
    fn rejects_non_orthonormal() {
        assert!(ProjectionBasis::new(2, 2, vec![1.0, 0.0, 1.0, 0.0], BasisSource::Supplied).is_err());
    }
}
