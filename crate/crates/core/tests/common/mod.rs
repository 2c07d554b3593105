//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numerical kernels.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsedict::sae::SaeParams;
use sparsedict::store::{ActivationBatch, SyntheticSpectrumSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_batch(n: usize, d: usize, scale: f32, seed: u64) -> ActivationBatch {
    let mut r = rng(seed);
    let data = (0..n * d).map(|_| r.random_range(-scale..scale)).collect();
    ActivationBatch::new(data, n, d).unwrap()
}

/// `d = 64`, sixteen unit singular values and a 0.01 tail: intrinsic
/// dimension 16 at every threshold up to 0.999.
pub fn low_rank_spec(seed: u64) -> SyntheticSpectrumSpec {
    let mut sv = vec![0.01; 64];
    sv[..16].iter_mut().for_each(|v| *v = 1.0);
    SyntheticSpectrumSpec::new(sv, seed)
}

/// Singular values of the centered data matrix divided by √(n−1), via a
/// dense SVD.
pub fn dense_singular_values(batch: &ActivationBatch) -> Vec<f64> {
    let (n, d) = (batch.n(), batch.d());
    let mut m = DMatrix::<f64>::from_fn(n, d, |i, j| batch.row(i)[j] as f64);
    for j in 0..d {
        let mean = m.column(j).sum() / n as f64;
        m.column_mut(j).add_scalar_mut(-mean);
    }
    let mut sv: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s / ((n - 1) as f64).sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Indices of the `k` largest entries by full sort, ties to the lower index.
pub fn full_sort_topk(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

/// Per-input active sets of a TopK SAE, recomputed densely.
pub fn dense_active_sets(p: &SaeParams<f64>, x: &ActivationBatch) -> Vec<Vec<usize>> {
    (0..x.n())
        .map(|i| full_sort_topk(&dense_pre(p, x.row(i)), p.k()))
        .collect()
}

pub fn dense_pre(p: &SaeParams<f64>, x: &[f32]) -> Vec<f64> {
    let d = p.d();
    (0..p.h())
        .map(|j| {
            (0..d).map(|c| p.w_enc[j * d + c] * x[c] as f64).sum::<f64>() + p.b_enc[j]
        })
        .collect()
}

/// `Σ_{j∈S} W_d[:,j] · pre_j`, plus `bias` when given.
fn decode(p: &SaeParams<f64>, pre: &[f64], set: &[usize], bias: Option<&[f64]>) -> Vec<f64> {
    let d = p.d();
    let mut out = bias.map(|b| b.to_vec()).unwrap_or_else(|| vec![0.0; d]);
    for &j in set {
        for r in 0..d {
            out[r] += p.w_dec[j * d + r] * pre[j];
        }
    }
    out
}

/// Pinned-selection reference for the full objective
/// `mean‖x − x̂‖² + α·mean‖e − ê‖²` with `e` held constant.
pub struct PinnedLoss<'a> {
    pub x: &'a ActivationBatch,
    pub main: Vec<Vec<usize>>,
    pub aux: Option<(Vec<Vec<usize>>, Vec<f64>, f64)>,
}

impl PinnedLoss<'_> {
    pub fn eval(&self, p: &SaeParams<f64>) -> f64 {
        let (n, d) = (self.x.n(), p.d());
        let mut total = 0.0;
        for i in 0..n {
            let x = self.x.row(i);
            let pre = dense_pre(p, x);
            let xhat = decode(p, &pre, &self.main[i], Some(&p.b_dec));
            total += (0..d).map(|r| (x[r] as f64 - xhat[r]).powi(2)).sum::<f64>() / n as f64;
            if let Some((sets, res, alpha)) = &self.aux {
                let ehat = decode(p, &pre, &sets[i], None);
                let e = &res[i * d..(i + 1) * d];
                total += alpha * (0..d).map(|r| (e[r] - ehat[r]).powi(2)).sum::<f64>() / n as f64;
            }
        }
        total
    }
}

/// Central-difference gradient of `f` with respect to every parameter, in
/// the order `w_enc, b_enc, w_dec, b_dec`.
pub fn finite_difference<F: Fn(&SaeParams<f64>) -> f64>(
    p: &SaeParams<f64>,
    f: F,
    step: f64,
) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for (t, slot) in out.iter_mut().enumerate() {
        let len = tensor(p, t).len();
        for i in 0..len {
            let mut q = p.clone();
            tensor_mut(&mut q, t)[i] += step;
            let up = f(&q);
            tensor_mut(&mut q, t)[i] -= 2.0 * step;
            let down = f(&q);
            slot.push((up - down) / (2.0 * step));
        }
    }
    out
}

pub fn tensor(p: &SaeParams<f64>, t: usize) -> &[f64] {
    match t {
        0 => &p.w_enc,
        1 => &p.b_enc,
        2 => &p.w_dec,
        _ => &p.b_dec,
    }
}

fn tensor_mut(p: &mut SaeParams<f64>, t: usize) -> &mut Vec<f64> {
    match t {
        0 => &mut p.w_enc,
        1 => &mut p.b_enc,
        2 => &mut p.w_dec,
        _ => &mut p.b_dec,
    }
}

/// Largest relative disagreement, ignoring entries where both are below
/// `floor` in magnitude.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale <= floor {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub fn random_params(d: usize, h: usize, k: usize, seed: u64) -> SaeParams<f64> {
    let mut r = rng(seed);
    let mut p = SaeParams::<f64>::zeros(d, h, k).unwrap();
    for v in p.w_enc.iter_mut().chain(&mut p.w_dec).chain(&mut p.b_enc).chain(&mut p.b_dec) {
        *v = r.random_range(-1.0..1.0);
    }
    p
}

/// Textbook Adam on one scalar; returns `(p, m, v)` after all gradients.
pub fn scalar_adam(grads: &[f64], lr: f64, p0: f64) -> (f64, f64, f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    (p, m, v)
}

/// Unbiased sample variance, two-pass.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Unit vector with Gaussian-like random entries.
pub fn random_unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rows with per-column scales `scales`, so the spectrum is well spread.
pub fn scaled_batch(n: usize, scales: &[f32], seed: u64) -> ActivationBatch {
    let mut r = rng(seed);
    let d = scales.len();
    let data = (0..n * d).map(|i| r.random_range(-1.0f32..1.0) * scales[i % d] + 0.5).collect();
    ActivationBatch::new(data, n, d).unwrap()
}
