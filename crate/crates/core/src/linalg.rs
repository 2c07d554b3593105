//! Small dense linear algebra helpers shared by the analysis and training code.
//!
//! Everything is plain `Vec`/slice storage; matrix products go through
//! `matrixmultiply` so the SAE hot path runs at gemm speed on one core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point element type used by SAE parameters and optimizer state.
///
/// Training runs in `f32`; gradient checks and optimizer oracles use `f64`.
pub trait Scalar:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn as_f64(self) -> f64;

    /// # Safety
    /// Caller guarantees the strided views stay inside their buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Borrowed strided matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    /// Row-major `rows × cols` view over `data`.
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major view size");
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// `out = alpha · a · b + beta · out`, with `out` row-major `a.rows × b.cols`.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v = beta * *v;
        }
        return;
    }
    // SAFETY: both views were built from slices whose lengths cover every
    // strided index touched for the given shapes, and `out` is m×n.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Dot product with eight independent accumulators so LLVM can vectorize it.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha · x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn norm<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// Orthonormalizes the columns of a column-major `rows × cols` matrix in place
/// with two passes of modified Gram-Schmidt. Fails on (numerically) dependent
/// columns.
pub fn orthonormalize_columns(data: &mut [f64], rows: usize, cols: usize) -> crate::Result<()> {
    assert_eq!(data.len(), rows * cols);
    for j in 0..cols {
        let (done, rest) = data.split_at_mut(j * rows);
        let col = &mut rest[..rows];
        let original = norm(col);
        for _pass in 0..2 {
            for i in 0..j {
                let prev = &done[i * rows..(i + 1) * rows];
                let proj = dot(prev, col);
                axpy(-proj, prev, col);
            }
        }
        let n = norm(col);
        if !(n > 1e-10 * original.max(f64::MIN_POSITIVE)) || !n.is_finite() {
            return Err(crate::Error::Numeric(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        for v in col.iter_mut() {
            *v /= n;
        }
    }
    Ok(())
}

/// Column-major `rows × cols` matrix with orthonormal columns, obtained by
/// orthonormalizing an i.i.d. standard Gaussian matrix drawn from `rng`.
pub fn gaussian_orthonormal<R: rand::Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
) -> crate::Result<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    if cols > rows {
        return Err(crate::Error::invalid(format!(
            "cannot draw {cols} orthonormal columns in dimension {rows}"
        )));
    }
    // A Gaussian draw is rank deficient with probability zero; retry anyway
    // rather than fail on an unlucky stream.
    for _ in 0..8 {
        let mut data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
        if orthonormalize_columns(&mut data, rows, cols).is_ok() {
            return Ok(data);
        }
    }
    Err(crate::Error::Numeric("could not draw a full-rank Gaussian matrix".into()))
}
