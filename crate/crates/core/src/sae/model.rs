use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, gemm, MatRef, Scalar};
use crate::sae::{topk_indices, topk_indices_masked, SaeParams};
use crate::store::ActivationBatch;

/// AuxK loss coefficient.
pub const DEFAULT_AUX_ALPHA: f64 = 1.0 / 32.0;

/// Everything the backward pass and the dead-feature tracker need from one
/// forward pass over a batch.
#[derive(Debug, Clone)]
pub struct SaeForward<T> {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub k: usize,
    /// `n × h` pre-activations `W_e x + b_e`.
    pub pre: Vec<T>,
    /// `n × k` selected feature indices, ascending within each row.
    pub active: Vec<u32>,
    /// `n × k` code values aligned with `active`.
    pub codes: Vec<T>,
    /// `n × d` reconstructions.
    pub recon: Vec<T>,
}

impl<T: Scalar> SaeForward<T> {
    pub fn active_row(&self, i: usize) -> &[u32] {
        &self.active[i * self.k..(i + 1) * self.k]
    }

    pub fn codes_row(&self, i: usize) -> &[T] {
        &self.codes[i * self.k..(i + 1) * self.k]
    }

    pub fn recon_row(&self, i: usize) -> &[T] {
        &self.recon[i * self.d..(i + 1) * self.d]
    }

    /// Dense `h`-vector code for input `i`.
    pub fn dense_code(&self, i: usize) -> Vec<T> {
        let mut z = vec![T::zero(); self.h];
        for (&j, &c) in self.active_row(i).iter().zip(self.codes_row(i)) {
            z[j as usize] = c;
        }
        z
    }

    /// Mean number of non-zero code entries per input.
    pub fn mean_l0(&self) -> f64 {
        let nz = self.codes.iter().filter(|c| **c != T::zero()).count();
        nz as f64 / self.n as f64
    }
}

fn to_scalar<T: Scalar>(batch: &ActivationBatch) -> Vec<T> {
    batch.as_slice().iter().map(|&v| T::from_f32(v)).collect()
}

fn check_dims<T: Scalar>(params: &SaeParams<T>, batch: &ActivationBatch) -> Result<()> {
    if batch.d() != params.d() {
        return Err(Error::DimensionMismatch {
            what: "batch dimension vs SAE input size",
            expected: params.d(),
            found: batch.d(),
        });
    }
    Ok(())
}

/// Pre-activations for every input and feature, `n × h`.
fn pre_activations<T: Scalar>(params: &SaeParams<T>, x: &[T], n: usize) -> Vec<T> {
    let (d, h) = (params.d(), params.h());
    let mut pre = Vec::with_capacity(n * h);
    for _ in 0..n {
        pre.extend_from_slice(&params.b_enc);
    }
    gemm(
        T::one(),
        MatRef::row_major(x, n, d),
        MatRef::row_major(&params.w_enc, h, d).t(),
        T::one(),
        &mut pre,
    );
    pre
}

pub fn forward<T: Scalar>(params: &SaeParams<T>, batch: &ActivationBatch) -> Result<SaeForward<T>> {
    check_dims(params, batch)?;
    params.validate()?;
    let (n, d, h, k) = (batch.n(), params.d(), params.h(), params.k());
    let x = to_scalar::<T>(batch);
    let pre = pre_activations(params, &x, n);

    let mut active = Vec::with_capacity(n * k);
    let mut codes = Vec::with_capacity(n * k);
    let mut recon = Vec::with_capacity(n * d);
    let mut idx = Vec::with_capacity(k);
    for i in 0..n {
        let row = &pre[i * h..(i + 1) * h];
        topk_indices(row, k, &mut idx);
        let start = recon.len();
        recon.extend_from_slice(&params.b_dec);
        let xr = &mut recon[start..];
        for &j in &idx {
            let z = row[j];
            active.push(j as u32);
            codes.push(z);
            if z != T::zero() {
                axpy(z, params.decoder_column(j), xr);
            }
        }
    }
    Ok(SaeForward {
        n,
        d,
        h,
        k,
        pre,
        active,
        codes,
        recon,
    })
}

/// `x − x̂`, row-major `n × d`.
pub fn residual<T: Scalar>(fwd: &SaeForward<T>, batch: &ActivationBatch) -> Vec<T> {
    batch
        .as_slice()
        .iter()
        .zip(&fwd.recon)
        .map(|(&x, &r)| T::from_f32(x) - r)
        .collect()
}

/// Mean over the batch of `‖x − x̂‖²`.
pub fn reconstruction_loss<T: Scalar>(fwd: &SaeForward<T>, batch: &ActivationBatch) -> Result<f64> {
    if batch.n() != fwd.n || batch.d() != fwd.d {
        return Err(Error::DimensionMismatch {
            what: "batch shape vs forward pass",
            expected: fwd.n * fwd.d,
            found: batch.n() * batch.d(),
        });
    }
    let total: f64 = batch
        .as_slice()
        .iter()
        .zip(&fwd.recon)
        .map(|(&x, &r)| {
            let e = x as f64 - r.as_f64();
            e * e
        })
        .sum();
    Ok(total / fwd.n as f64)
}

/// Auxiliary reconstruction of the main residual from dead features only.
#[derive(Debug, Clone)]
pub struct AuxForward<T> {
    pub n: usize,
    pub d: usize,
    /// Features selected per input (`min(k_aux, #dead)`).
    pub k: usize,
    pub active: Vec<u32>,
    pub codes: Vec<T>,
    /// `n × d`, `W_d z_aux` without the decoder bias.
    pub recon: Vec<T>,
}

impl<T> AuxForward<T> {
    pub fn active_row(&self, i: usize) -> &[u32] {
        &self.active[i * self.k..(i + 1) * self.k]
    }
}

/// Selects the `k_aux` largest dead pre-activations per input and decodes
/// them. `None` when no feature is dead.
pub fn aux_forward<T: Scalar>(
    params: &SaeParams<T>,
    fwd: &SaeForward<T>,
    dead: &[bool],
    k_aux: usize,
) -> Result<Option<AuxForward<T>>> {
    if dead.len() != params.h() {
        return Err(Error::DimensionMismatch {
            what: "dead mask length",
            expected: params.h(),
            found: dead.len(),
        });
    }
    if k_aux == 0 {
        return Err(Error::invalid("k_aux must be at least 1"));
    }
    let n_dead = dead.iter().filter(|b| **b).count();
    if n_dead == 0 {
        return Ok(None);
    }
    let (n, d, h) = (fwd.n, fwd.d, fwd.h);
    let k = k_aux.min(n_dead);
    let mut active = Vec::with_capacity(n * k);
    let mut codes = Vec::with_capacity(n * k);
    let mut recon = vec![T::zero(); n * d];
    let mut idx = Vec::with_capacity(k);
    for i in 0..n {
        let row = &fwd.pre[i * h..(i + 1) * h];
        topk_indices_masked(row, Some(dead), k, &mut idx);
        let out = &mut recon[i * d..(i + 1) * d];
        for &j in &idx {
            active.push(j as u32);
            codes.push(row[j]);
            axpy(row[j], params.decoder_column(j), out);
        }
    }
    Ok(Some(AuxForward {
        n,
        d,
        k,
        active,
        codes,
        recon,
    }))
}

/// Mean over the batch of `‖e − ê‖²` for residual `e`.
pub fn aux_loss_value<T: Scalar>(aux: &AuxForward<T>, residual: &[T]) -> f64 {
    let total: f64 = residual
        .iter()
        .zip(&aux.recon)
        .map(|(&e, &r)| {
            let diff = (e - r).as_f64();
            diff * diff
        })
        .sum();
    total / aux.n as f64
}

/// AuxK loss from scratch: recomputes pre-activations, picks the top `k_aux`
/// dead features per input, and scores their reconstruction of `residual`.
/// Zero when nothing is dead.
pub fn aux_loss<T: Scalar>(
    params: &SaeParams<T>,
    batch: &ActivationBatch,
    residual: &[T],
    dead: &[bool],
    k_aux: usize,
) -> Result<f64> {
    let fwd = forward(params, batch)?;
    if residual.len() != fwd.n * fwd.d {
        return Err(Error::DimensionMismatch {
            what: "residual length",
            expected: fwd.n * fwd.d,
            found: residual.len(),
        });
    }
    Ok(aux_forward(params, &fwd, dead, k_aux)?
        .map(|aux| aux_loss_value(&aux, residual))
        .unwrap_or(0.0))
}

/// Gradients with the same layout as [`SaeParams`], plus the set of features
/// whose rows received any signal.
#[derive(Debug, Clone)]
pub struct SaeGrads<T> {
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    pub w_dec: Vec<T>,
    pub b_dec: Vec<T>,
    pub touched: Vec<bool>,
}

impl<T: Scalar> SaeGrads<T> {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w_enc: vec![T::zero(); h * d],
            b_enc: vec![T::zero(); h],
            w_dec: vec![T::zero(); h * d],
            b_dec: vec![T::zero(); d],
            touched: vec![false; h],
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Routes `dL/dx̂` for one input back through the selected features.
#[allow(clippy::too_many_arguments)]
fn backprop_codes<T: Scalar>(
    params: &SaeParams<T>,
    grads: &mut SaeGrads<T>,
    x: &[T],
    upstream: &[T],
    active: &[u32],
    codes: &[T],
) {
    let d = params.d();
    for (&j, &z) in active.iter().zip(codes) {
        let j = j as usize;
        let rows = j * d..(j + 1) * d;
        axpy(z, upstream, &mut grads.w_dec[rows.clone()]);
        let g_pre = dot(params.decoder_column(j), upstream);
        axpy(g_pre, x, &mut grads.w_enc[rows]);
        grads.b_enc[j] += g_pre;
        grads.touched[j] = true;
    }
}

/// Analytic gradient of `mean ‖x − x̂‖² + α · mean ‖e − ê‖²`.
///
/// The TopK and AuxK selections are held fixed and the AuxK target `e` is a
/// constant, so the auxiliary term never reaches `b_dec`.
pub fn backward<T: Scalar>(
    params: &SaeParams<T>,
    batch: &ActivationBatch,
    fwd: &SaeForward<T>,
    aux: Option<(&AuxForward<T>, &[T], T)>,
) -> Result<SaeGrads<T>> {
    check_dims(params, batch)?;
    let (n, d) = (batch.n(), params.d());
    if fwd.n != n {
        return Err(Error::DimensionMismatch {
            what: "forward rows vs batch rows",
            expected: n,
            found: fwd.n,
        });
    }
    let mut grads = SaeGrads::zeros(d, params.h());
    let scale = T::from_f64(-2.0 / n as f64);
    let mut upstream = vec![T::zero(); d];
    let mut x = vec![T::zero(); d];
    for i in 0..n {
        for (dst, &v) in x.iter_mut().zip(batch.row(i)) {
            *dst = T::from_f32(v);
        }
        for ((u, &xv), &r) in upstream.iter_mut().zip(&x).zip(fwd.recon_row(i)) {
            *u = scale * (xv - r);
        }
        axpy(T::one(), &upstream, &mut grads.b_dec);
        backprop_codes(params, &mut grads, &x, &upstream, fwd.active_row(i), fwd.codes_row(i));

        if let Some((aux, res, alpha)) = aux {
            let a_scale = scale * alpha;
            let e = &res[i * d..(i + 1) * d];
            let r = &aux.recon[i * d..(i + 1) * d];
            for ((u, &ev), &rv) in upstream.iter_mut().zip(e).zip(r) {
                *u = a_scale * (ev - rv);
            }
            let codes = &aux.codes[i * aux.k..(i + 1) * aux.k];
            backprop_codes(params, &mut grads, &x, &upstream, aux.active_row(i), codes);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, h: usize, k: usize, seed: u64) -> SaeParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SaeParams::<f64>::zeros(d, h, k).unwrap();
        for v in p.w_enc.iter_mut().chain(&mut p.w_dec).chain(&mut p.b_enc).chain(&mut p.b_dec) {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> ActivationBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActivationBatch::new((0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(), n, d)
            .unwrap()
    }

    #[test]
    fn zero_network_reconstructs_zero() {
        let p = SaeParams::<f32>::zeros(3, 5, 2).unwrap();
        let b = random_batch(4, 3, 1);
        let f = forward(&p, &b).unwrap();
        assert!(f.recon.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn orthonormal_full_rank_is_identity() {
        let d = 4;
        let basis = crate::spectra::random_subspace(d, d, 9).unwrap();
        let mut p = SaeParams::<f32>::zeros(d, d, d).unwrap();
        for (j, col) in basis.columns().enumerate() {
            for r in 0..d {
                p.w_dec[j * d + r] = col[r] as f32;
            }
        }
        p.w_enc = p.w_dec.clone();
        let b = random_batch(6, d, 2);
        let f = forward(&p, &b).unwrap();
        for (x, r) in b.as_slice().iter().zip(&f.recon) {
            assert!((x - r).abs() < 1e-5);
        }
    }

    #[test]
    fn dense_oracle_small_instance() {
        let (d, h, k) = (4, 8, 2);
        let p = random_params(d, h, k, 3);
        let b = random_batch(5, d, 4);
        let f = forward(&p, &b).unwrap();
        for i in 0..5 {
            let x: Vec<f64> = b.row(i).iter().map(|&v| v as f64).collect();
            let pre: Vec<f64> = (0..h)
                .map(|j| (0..d).map(|c| p.w_enc[j * d + c] * x[c]).sum::<f64>() + p.b_enc[j])
                .collect();
            let mut order: Vec<usize> = (0..h).collect();
            order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
            let mut z = vec![0.0; h];
            for &j in &order[..k] {
                z[j] = pre[j];
            }
            for c in 0..d {
                let want: f64 = p.b_dec[c] + (0..h).map(|j| p.w_dec[j * d + c] * z[j]).sum::<f64>();
                assert!((f.recon_row(i)[c] - want).abs() < 1e-6);
            }
            for (got, want) in f.dense_code(i).iter().zip(&z) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_examples() {
        let mut p = SaeParams::<f32>::zeros(2, 2, 1).unwrap();
        let b = ActivationBatch::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert_eq!(reconstruction_loss(&forward(&p, &b).unwrap(), &b).unwrap(), 1.0);
        // errors of squared size 1 and 3 average to 2
        let b2 = ActivationBatch::from_rows(&[[1.0f32, 0.0], [1.0, 2.0f32.sqrt()]]).unwrap();
        let l = reconstruction_loss(&forward(&p, &b2).unwrap(), &b2).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
        // perfect reconstruction via the decoder bias
        p.b_dec = vec![1.0, 0.0];
        assert_eq!(reconstruction_loss(&forward(&p, &b).unwrap(), &b).unwrap(), 0.0);
    }

    #[test]
    fn aux_loss_cases() {
        let (d, h) = (2, 3);
        let mut p = SaeParams::<f64>::zeros(d, h, 1).unwrap();
        // feature 2 is the only dead one; its encoder yields pre-activation 1
        p.w_enc[2 * d] = 1.0;
        p.w_dec[2 * d..3 * d].copy_from_slice(&[0.6, 0.8]);
        let b = ActivationBatch::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let res = vec![0.6, 0.7];
        assert_eq!(aux_loss(&p, &b, &res, &[false; 3], 4).unwrap(), 0.0);
        let dead = [false, false, true];
        let l = aux_loss(&p, &b, &res, &dead, 4).unwrap();
        assert!((l - 0.01).abs() < 1e-12, "{l}");
        assert!(aux_loss(&p, &b, &res, &dead, 0).is_err());
    }

    #[test]
    fn touched_rows_match_active_sets() {
        let p = random_params(3, 10, 2, 5);
        let b = random_batch(3, 3, 6);
        let f = forward(&p, &b).unwrap();
        let g = backward(&p, &b, &f, None).unwrap();
        let mut expect = vec![false; 10];
        for &j in &f.active {
            expect[j as usize] = true;
        }
        assert_eq!(g.touched, expect);
        for j in 0..10 {
            if !expect[j] {
                assert!(g.w_enc[j * 3..j * 3 + 3].iter().all(|v| *v == 0.0));
                assert!(g.w_dec[j * 3..j * 3 + 3].iter().all(|v| *v == 0.0));
                assert_eq!(g.b_enc[j], 0.0);
            }
        }
    }
}
