use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Weights of a TopK SAE with input size `d`, `h` features and sparsity `k`.
///
/// Both weight matrices are stored feature-major: `w_enc` row `j` is the
/// encoder row of feature `j` (`W_e[j, :]`) and `w_dec` row `j` is its decoder
/// column (`W_d[:, j]`). Under tied initialization the two buffers are equal.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<T = f32> {
    d: usize,
    h: usize,
    k: usize,
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    pub w_dec: Vec<T>,
    pub b_dec: Vec<T>,
}

impl<T: Scalar> SaeParams<T> {
    pub fn zeros(d: usize, h: usize, k: usize) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::invalid(format!("SAE shape must be positive, got d={d}, h={h}")));
        }
        if k == 0 || k > h {
            return Err(Error::invalid(format!("sparsity k={k} outside 1..={h}")));
        }
        Ok(Self {
            d,
            h,
            k,
            w_enc: vec![T::zero(); h * d],
            b_enc: vec![T::zero(); h],
            w_dec: vec![T::zero(); h * d],
            b_dec: vec![T::zero(); d],
        })
    }

    pub fn from_parts(
        d: usize,
        h: usize,
        k: usize,
        w_enc: Vec<T>,
        b_enc: Vec<T>,
        w_dec: Vec<T>,
        b_dec: Vec<T>,
    ) -> Result<Self> {
        let p = Self {
            d,
            h,
            k,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn encoder_row(&self, j: usize) -> &[T] {
        &self.w_enc[j * self.d..(j + 1) * self.d]
    }

    pub fn decoder_column(&self, j: usize) -> &[T] {
        &self.w_dec[j * self.d..(j + 1) * self.d]
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        2 * self.h * self.d + self.h + self.d
    }

    /// Shape checks plus finiteness of every entry.
    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.d, self.h);
        if d == 0 || h == 0 || self.k == 0 || self.k > h {
            return Err(Error::invalid(format!(
                "invalid SAE shape d={d}, h={h}, k={}",
                self.k
            )));
        }
        for (what, len, want) in [
            ("w_enc", self.w_enc.len(), h * d),
            ("b_enc", self.b_enc.len(), h),
            ("w_dec", self.w_dec.len(), h * d),
            ("b_dec", self.b_dec.len(), d),
        ] {
            if len != want {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: want,
                    found: len,
                });
            }
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.w_enc) && finite(&self.b_enc) && finite(&self.w_dec) && finite(&self.b_dec))
        {
            return Err(Error::Numeric("SAE parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Element-type conversion, e.g. an f64 shadow copy for gradient checks.
    pub fn cast<U: Scalar>(&self) -> SaeParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        SaeParams {
            d: self.d,
            h: self.h,
            k: self.k,
            w_enc: conv(&self.w_enc),
            b_enc: conv(&self.b_enc),
            w_dec: conv(&self.w_dec),
            b_dec: conv(&self.b_dec),
        }
    }
}
