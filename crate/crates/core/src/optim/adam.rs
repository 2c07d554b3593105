use crate::error::{Error, Result};
use crate::linalg::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay applied to updated entries; 0 disables it.
    pub weight_decay: f64,
    /// Optional global gradient-norm clip.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Per-tensor Adam state with a single step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> DenseMoments<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// Per-tensor SparseAdam state: the tensor is split into rows of `row_len`
/// entries, each with its own step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMoments<T> {
    pub row_len: usize,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub row_steps: Vec<u64>,
}

impl<T: Scalar> RowMoments<T> {
    pub fn new(rows: usize, row_len: usize) -> Self {
        Self {
            row_len,
            m: vec![T::zero(); rows * row_len],
            v: vec![T::zero(); rows * row_len],
            row_steps: vec![0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.row_steps.len()
    }
}

/// Which feature rows received gradient in a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSparsityMask {
    pub bits: Vec<bool>,
}

impl RowSparsityMask {
    pub fn all(rows: usize) -> Self {
        Self {
            bits: vec![true; rows],
        }
    }

    pub fn none(rows: usize) -> Self {
        Self {
            bits: vec![false; rows],
        }
    }

    /// Union of per-input active sets.
    pub fn from_active<I: IntoIterator<Item = usize>>(rows: usize, active: I) -> Self {
        let mut bits = vec![false; rows];
        for j in active {
            bits[j] = true;
        }
        Self { bits }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn bias_corrections<T: Scalar>(cfg: &AdamConfig, step: u64) -> (T, T) {
    let t = step as f64;
    (
        T::from_f64(1.0 - cfg.beta1.powf(t)),
        T::from_f64(1.0 - cfg.beta2.powf(t)),
    )
}

/// Shared element update; both optimizers go through this so their
/// arithmetic is identical.
#[inline]
#[allow(clippy::too_many_arguments)]
fn update_slice<T: Scalar>(
    cfg: &AdamConfig,
    step: u64,
    params: &mut [T],
    m: &mut [T],
    v: &mut [T],
    grads: &[T],
) {
    let (bc1, bc2) = bias_corrections::<T>(cfg, step);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let wd = T::from_f64(cfg.weight_decay);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        if cfg.weight_decay > 0.0 {
            params[i] -= lr * wd * params[i];
        }
        params[i] -= lr * (m_hat / (v_hat.sqrt() + eps));
    }
}

fn check_shapes(what: &'static str, params: usize, grads: usize, state: usize) -> Result<()> {
    for found in [grads, state] {
        if found != params {
            return Err(Error::DimensionMismatch {
                what,
                expected: params,
                found,
            });
        }
    }
    Ok(())
}

fn check_finite<T: Scalar>(grads: &[T]) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at index {i}; step rejected"
        )));
    }
    Ok(())
}

/// Standard bias-corrected Adam over every entry.
pub fn adam_step<T: Scalar>(
    cfg: &AdamConfig,
    state: &mut DenseMoments<T>,
    params: &mut [T],
    grads: &[T],
) -> Result<()> {
    cfg.validate()?;
    check_shapes("adam tensor length", params.len(), grads.len(), state.m.len())?;
    check_finite(grads)?;
    state.step += 1;
    update_slice(cfg, state.step, params, &mut state.m, &mut state.v, grads);
    Ok(())
}

/// Adam restricted to masked-in rows, with per-row bias correction.
///
/// Rows outside the mask must carry exactly zero gradient; anything else is a
/// contract violation and nothing is modified.
pub fn sparse_adam_step<T: Scalar>(
    cfg: &AdamConfig,
    state: &mut RowMoments<T>,
    params: &mut [T],
    grads: &[T],
    mask: &RowSparsityMask,
) -> Result<()> {
    cfg.validate()?;
    check_shapes("sparse adam tensor length", params.len(), grads.len(), state.m.len())?;
    if mask.bits.len() != state.rows() {
        return Err(Error::DimensionMismatch {
            what: "sparsity mask length",
            expected: state.rows(),
            found: mask.bits.len(),
        });
    }
    check_finite(grads)?;
    let w = state.row_len;
    for (r, &on) in mask.bits.iter().enumerate() {
        if !on && grads[r * w..(r + 1) * w].iter().any(|g| *g != T::zero()) {
            return Err(Error::SparsityContract(format!(
                "row {r} has non-zero gradient but is outside the mask"
            )));
        }
    }
    for (r, &on) in mask.bits.iter().enumerate() {
        if !on {
            continue;
        }
        state.row_steps[r] += 1;
        let span = r * w..(r + 1) * w;
        update_slice(
            cfg,
            state.row_steps[r],
            &mut params[span.clone()],
            &mut state.m[span.clone()],
            &mut state.v[span.clone()],
            &grads[span],
        );
    }
    Ok(())
}
