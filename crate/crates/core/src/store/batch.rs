use crate::error::{Error, Result};

/// An `n × d` block of activation row vectors, row-major f32.
///
/// Construction validates shape and finiteness, so every live batch satisfies
/// both invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    data: Vec<f32>,
    n: usize,
    d: usize,
}

impl ActivationBatch {
    pub fn new(data: Vec<f32>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "activation batch must be non-empty, got {n}×{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                what: "batch payload length",
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: d,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), d)
    }

    /// Number of rows (tokens).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Row length (hidden size).
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Column means in f64.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.d];
        for row in self.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        let inv = 1.0 / self.n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// Rows `start..end` as a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return Err(Error::invalid(format!(
                "row range {start}..{end} outside batch of {} rows",
                self.n
            )));
        }
        Self::new(self.data[start * self.d..end * self.d].to_vec(), end - start, self.d)
    }

    /// Stacks batches with a common `d` into one.
    pub fn concat(batches: &[ActivationBatch]) -> Result<Self> {
        let first = batches
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate zero batches"))?;
        let mut data = Vec::with_capacity(batches.iter().map(|b| b.data.len()).sum());
        for b in batches {
            if b.d != first.d {
                return Err(Error::DimensionMismatch {
                    what: "batch dimension",
                    expected: first.d,
                    found: b.d,
                });
            }
            data.extend_from_slice(&b.data);
        }
        let n = data.len() / first.d;
        Self::new(data, n, first.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_bad_shape() {
        let err = ActivationBatch::new(vec![1.0, f32::NAN], 1, 2).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
        assert!(ActivationBatch::new(vec![1.0; 5], 2, 3).is_err());
        assert!(ActivationBatch::new(vec![], 0, 3).is_err());
        assert!(ActivationBatch::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn mean_and_slices() {
        let b = ActivationBatch::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]).unwrap();
        assert_eq!(b.mean(), vec![3.0, 3.0]);
        let s = b.slice_rows(1, 3).unwrap();
        assert_eq!(s.row(0), &[3.0, 6.0]);
        let c = ActivationBatch::concat(&[s.clone(), s]).unwrap();
        assert_eq!(c.n(), 4);
    }
}
