use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::store::ActivationBatch;

const CHUNK_ROWS: usize = 8192;

/// Running count, mean and centered scatter `Σ (x−mean)(x−mean)ᵀ`, all in f64.
///
/// Batches are folded in with the pairwise (Chan et al.) update, so the
/// result does not depend on how the rows were split into batches beyond
/// rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingMoments {
    d: usize,
    count: u64,
    mean: Vec<f64>,
    /// Row-major `d × d`.
    scatter: Vec<f64>,
}

impl StreamingMoments {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            count: 0,
            mean: vec![0.0; d],
            scatter: vec![0.0; d * d],
        }
    }

    pub fn from_batch(batch: &ActivationBatch) -> Self {
        let mut m = Self::new(batch.d());
        m.accumulate(batch).expect("dimension matches by construction");
        m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scatter(&self) -> &[f64] {
        &self.scatter
    }

    /// Unbiased covariance `scatter / (count − 1)`, symmetrized.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::invalid(format!(
                "covariance needs at least 2 samples, have {}",
                self.count
            )));
        }
        let d = self.d;
        let inv = 1.0 / (self.count - 1) as f64;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = 0.5 * (self.scatter[i * d + j] + self.scatter[j * d + i]) * inv;
            }
        }
        Ok(cov)
    }

    pub fn accumulate(&mut self, batch: &ActivationBatch) -> Result<()> {
        if batch.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "batch dimension",
                expected: self.d,
                found: batch.d(),
            });
        }
        let d = self.d;
        for chunk in batch.as_slice().chunks(CHUNK_ROWS * d) {
            let n = chunk.len() / d;
            let mut mean = vec![0.0f64; d];
            for row in chunk.chunks_exact(d) {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let centered: Vec<f64> = chunk
                .chunks_exact(d)
                .flat_map(|row| row.iter().zip(&mean).map(|(&x, m)| x as f64 - m))
                .collect();
            let mut scatter = vec![0.0; d * d];
            let view = MatRef::row_major(&centered, n, d);
            gemm(1.0, view.t(), view, 0.0, &mut scatter);
            self.merge_parts(n as u64, &mean, &scatter);
        }
        Ok(())
    }

    /// Folds another accumulator in; `a.merge(b)` and `b.merge(a)` agree up
    /// to rounding.
    pub fn merge(&mut self, other: &StreamingMoments) -> Result<()> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch {
                what: "moments dimension",
                expected: self.d,
                found: other.d,
            });
        }
        self.merge_parts(other.count, &other.mean, &other.scatter);
        Ok(())
    }

    fn merge_parts(&mut self, nb: u64, mean_b: &[f64], scatter_b: &[f64]) {
        if nb == 0 {
            return;
        }
        let d = self.d;
        if self.count == 0 {
            self.count = nb;
            self.mean.copy_from_slice(mean_b);
            self.scatter.copy_from_slice(scatter_b);
            return;
        }
        let na = self.count as f64;
        let nbf = nb as f64;
        let total = na + nbf;
        let delta: Vec<f64> = mean_b.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nbf / total;
        for i in 0..d {
            let di = delta[i] * w;
            let row = &mut self.scatter[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += scatter_b[i * d + j] + di * delta[j];
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nbf / total;
        }
        self.count += nb;
    }
}
