//! Optimizer over the four SAE tensors, plus its state file.
//!
//! ```text
//! magic b"SDLOPT\0\0" | version u32 | kind u32 | d u64 | h u64
//! | lr, beta1, beta2, eps, weight_decay, max_grad_norm (f64 bit patterns as u64; NaN = no clip)
//! | per tensor (w_enc, b_enc, w_dec, b_dec):
//! |   layout u32 (0 dense, 1 rows) | len u64 | row_len u64
//! |   dense: step u64 | rows: row_steps u64[len / row_len]
//! |   m f32[len] | v f32[len]
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::optim::adam::{
    adam_step, sparse_adam_step, AdamConfig, DenseMoments, RowMoments, RowSparsityMask,
};
use crate::sae::{SaeGrads, SaeParams};

pub const OPTIMIZER_MAGIC: [u8; 8] = *b"SDLOPT\0\0";
const OPTIMIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    #[default]
    SparseAdam,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SparseAdam => "sparse-adam",
        }
    }

    /// Learning rate used when none is configured.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Adam => 4e-5,
            OptimizerKind::SparseAdam => 6e-5,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sparse-adam" | "sparse_adam" | "sparseadam" => Ok(OptimizerKind::SparseAdam),
            other => Err(Error::invalid(format!(
                "unknown optimizer {other:?} (expected adam or sparse-adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TensorState<T> {
    Dense(DenseMoments<T>),
    Rows(RowMoments<T>),
}

impl<T: Scalar> TensorState<T> {
    fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [T],
        grads: &[T],
        mask: &RowSparsityMask,
    ) -> Result<()> {
        match self {
            TensorState::Dense(s) => adam_step(cfg, s, params, grads),
            TensorState::Rows(s) => sparse_adam_step(cfg, s, params, grads, mask),
        }
    }
}

/// Adam or SparseAdam over `(w_enc, b_enc, w_dec, b_dec)`.
///
/// Under SparseAdam the feature-indexed tensors use per-row state while
/// `b_dec` is always stepped densely.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeOptimizer<T> {
    kind: OptimizerKind,
    config: AdamConfig,
    d: usize,
    h: usize,
    tensors: [TensorState<T>; 4],
}

impl<T: Scalar> SaeOptimizer<T> {
    pub fn new(kind: OptimizerKind, config: AdamConfig, d: usize, h: usize) -> Self {
        let feature = |row_len: usize| match kind {
            OptimizerKind::Adam => TensorState::Dense(DenseMoments::new(h * row_len)),
            OptimizerKind::SparseAdam => TensorState::Rows(RowMoments::new(h, row_len)),
        };
        Self {
            kind,
            config,
            d,
            h,
            tensors: [
                feature(d),
                feature(1),
                feature(d),
                TensorState::Dense(DenseMoments::new(d)),
            ],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Per-feature step counters for SparseAdam, `None` for Adam.
    pub fn row_steps(&self) -> Option<&[u64]> {
        match &self.tensors[0] {
            TensorState::Rows(s) => Some(&s.row_steps),
            TensorState::Dense(_) => None,
        }
    }

    /// Applies one update. Nothing is modified if the gradients are
    /// non-finite or violate the sparsity contract.
    pub fn step(&mut self, params: &mut SaeParams<T>, grads: &SaeGrads<T>) -> Result<()> {
        if params.d() != self.d || params.h() != self.h {
            return Err(Error::DimensionMismatch {
                what: "optimizer vs parameter feature count",
                expected: self.h,
                found: params.h(),
            });
        }
        if grads.touched.len() != self.h {
            return Err(Error::DimensionMismatch {
                what: "gradient touched mask",
                expected: self.h,
                found: grads.touched.len(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient; step rejected".into()));
        }
        let mask = RowSparsityMask {
            bits: grads.touched.clone(),
        };
        let clipped;
        let grads = match self.clip_factor(grads) {
            Some(c) => {
                clipped = scale_grads(grads, c);
                &clipped
            }
            None => grads,
        };
        if self.kind == OptimizerKind::SparseAdam {
            // validate every tensor first so a contract violation leaves no partial update
            for (g, w) in [(&grads.w_enc, self.d), (&grads.b_enc, 1), (&grads.w_dec, self.d)] {
                for (r, on) in mask.bits.iter().enumerate() {
                    if !on && g[r * w..(r + 1) * w].iter().any(|v| *v != T::zero()) {
                        return Err(Error::SparsityContract(format!(
                            "feature {r} has gradient but did not fire"
                        )));
                    }
                }
            }
        }
        let cfg = self.config;
        let [we, be, wd, bd] = &mut self.tensors;
        we.step(&cfg, &mut params.w_enc, &grads.w_enc, &mask)?;
        be.step(&cfg, &mut params.b_enc, &grads.b_enc, &mask)?;
        wd.step(&cfg, &mut params.w_dec, &grads.w_dec, &mask)?;
        bd.step(&cfg, &mut params.b_dec, &grads.b_dec, &RowSparsityMask::all(0))?;
        Ok(())
    }

    fn clip_factor(&self, grads: &SaeGrads<T>) -> Option<T> {
        let max = self.config.max_grad_norm?;
        let sq: f64 = [&grads.w_enc, &grads.b_enc, &grads.w_dec, &grads.b_dec]
            .iter()
            .flat_map(|v| v.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum();
        let norm = sq.sqrt();
        (norm > max).then(|| T::from_f64(max / norm))
    }
}

fn scale_grads<T: Scalar>(g: &SaeGrads<T>, c: T) -> SaeGrads<T> {
    let s = |v: &[T]| v.iter().map(|x| *x * c).collect::<Vec<T>>();
    SaeGrads {
        w_enc: s(&g.w_enc),
        b_enc: s(&g.b_enc),
        w_dec: s(&g.w_dec),
        b_dec: s(&g.b_dec),
        touched: g.touched.clone(),
    }
}

impl SaeOptimizer<f32> {
    pub fn write_state<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&OPTIMIZER_MAGIC)?;
        put_u32(&mut w, OPTIMIZER_VERSION)?;
        put_u32(&mut w, matches!(self.kind, OptimizerKind::SparseAdam) as u32)?;
        put_u64(&mut w, self.d as u64)?;
        put_u64(&mut w, self.h as u64)?;
        let c = &self.config;
        for v in [
            c.lr,
            c.beta1,
            c.beta2,
            c.eps,
            c.weight_decay,
            c.max_grad_norm.unwrap_or(f64::NAN),
        ] {
            put_u64(&mut w, v.to_bits())?;
        }
        for t in &self.tensors {
            match t {
                TensorState::Dense(s) => {
                    put_u32(&mut w, 0)?;
                    put_u64(&mut w, s.m.len() as u64)?;
                    put_u64(&mut w, s.m.len() as u64)?;
                    put_u64(&mut w, s.step)?;
                    put_f32s(&mut w, &s.m)?;
                    put_f32s(&mut w, &s.v)?;
                }
                TensorState::Rows(s) => {
                    put_u32(&mut w, 1)?;
                    put_u64(&mut w, s.m.len() as u64)?;
                    put_u64(&mut w, s.row_len as u64)?;
                    put_u64s(&mut w, &s.row_steps)?;
                    put_f32s(&mut w, &s.m)?;
                    put_f32s(&mut w, &s.v)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_state<R: Read>(mut r: R) -> Result<Self> {
        get_magic(&mut r, OPTIMIZER_MAGIC)?;
        let version = get_u32(&mut r)?;
        if version != OPTIMIZER_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = match get_u32(&mut r)? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::SparseAdam,
            other => return Err(Error::InvalidHeader(format!("unknown optimizer code {other}"))),
        };
        let d = get_u64(&mut r)? as usize;
        let h = get_u64(&mut r)? as usize;
        if d == 0 || h == 0 || d.checked_mul(h).is_none_or(|v| v > 1 << 34) {
            return Err(Error::InvalidHeader(format!("implausible optimizer shape d={d}, h={h}")));
        }
        let mut f = [0f64; 6];
        for v in &mut f {
            *v = f64::from_bits(get_u64(&mut r)?);
        }
        let config = AdamConfig {
            lr: f[0],
            beta1: f[1],
            beta2: f[2],
            eps: f[3],
            weight_decay: f[4],
            max_grad_norm: (!f[5].is_nan()).then_some(f[5]),
        };
        let expected = Self::new(kind, config, d, h);
        let mut tensors = expected.tensors.clone();
        for (slot, want) in tensors.iter_mut().zip(&expected.tensors) {
            let layout = get_u32(&mut r)?;
            let len = get_u64(&mut r)? as usize;
            let row_len = get_u64(&mut r)? as usize;
            *slot = match (layout, want) {
                (0, TensorState::Dense(w)) if len == w.m.len() && row_len == len => {
                    let step = get_u64(&mut r)?;
                    let m = get_f32s(&mut r, len)?;
                    let v = get_f32s(&mut r, len)?;
                    TensorState::Dense(DenseMoments { m, v, step })
                }
                (1, TensorState::Rows(w)) if len == w.m.len() && row_len == w.row_len => {
                    let row_steps = get_u64s(&mut r, w.rows())?;
                    let m = get_f32s(&mut r, len)?;
                    let v = get_f32s(&mut r, len)?;
                    TensorState::Rows(RowMoments {
                        row_len,
                        m,
                        v,
                        row_steps,
                    })
                }
                _ => {
                    return Err(Error::InvalidHeader(format!(
                        "optimizer tensor layout {layout} (len {len}, row {row_len}) does not match {kind}"
                    )))
                }
            };
        }
        expect_eof(&mut r)?;
        Ok(Self {
            kind,
            config,
            d,
            h,
            tensors,
        })
    }
}
