//! Initialization schemes.
//!
//! Every scheme draws unit-norm decoder directions, ties the encoder to the
//! decoder transpose, and applies one global scale chosen to minimize the
//! reconstruction error on a calibration batch. With tied weights the
//! reconstruction scales with the square of that factor, and TopK selection
//! is unchanged by positive scaling, so the optimum is closed form:
//!
//! ```text
//! s² = Σ ⟨x − b_d, x̂₀⟩ / Σ ‖x̂₀‖²      (x̂₀: unit-scale reconstruction)
//! ```

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, gemm, MatRef, Scalar};
use crate::sae::{topk_indices, SaeParams};
use crate::spectra::ProjectionBasis;
use crate::store::ActivationBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Uniform random directions in the full space.
    #[serde(rename = "tied")]
    TiedRandom,
    /// Directions drawn inside the span of the leading principal directions.
    #[serde(rename = "asi")]
    ActiveSubspace,
    /// Directions drawn inside a random subspace of the same width.
    #[serde(rename = "random-subspace")]
    RandomSubspace,
}

impl InitScheme {
    pub fn label(self) -> &'static str {
        match self {
            InitScheme::TiedRandom => "tied",
            InitScheme::ActiveSubspace => "asi",
            InitScheme::RandomSubspace => "random-subspace",
        }
    }

    pub fn needs_basis(self) -> bool {
        !matches!(self, InitScheme::TiedRandom)
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tied" | "tied-random" => Ok(InitScheme::TiedRandom),
            "asi" | "active-subspace" => Ok(InitScheme::ActiveSubspace),
            "random-subspace" => Ok(InitScheme::RandomSubspace),
            _ => Err(Error::invalid(format!("unknown init scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderBiasInit {
    /// `b_d = 0`; appropriate for centered data.
    Zero,
    /// `b_d` = calibration-batch mean.
    #[default]
    Mean,
}

impl FromStr for DecoderBiasInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DecoderBiasInit::Zero),
            "mean" => Ok(DecoderBiasInit::Mean),
            _ => Err(Error::invalid(format!("unknown decoder bias init {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub basis: Option<ProjectionBasis>,
    pub seed: u64,
    pub decoder_bias: DecoderBiasInit,
}

impl InitSpec {
    pub fn tied(seed: u64) -> Self {
        Self {
            scheme: InitScheme::TiedRandom,
            basis: None,
            seed,
            decoder_bias: DecoderBiasInit::default(),
        }
    }

    pub fn subspace(scheme: InitScheme, basis: ProjectionBasis, seed: u64) -> Self {
        Self {
            scheme,
            basis: Some(basis),
            seed,
            decoder_bias: DecoderBiasInit::default(),
        }
    }

    /// Width of the initialization subspace (`d` for the full-space scheme).
    pub fn d_init(&self, d: usize) -> usize {
        self.basis.as_ref().map(|b| b.m()).unwrap_or(d)
    }
}

/// Unit-norm directions, feature-major `h × d`, in f64.
fn directions(spec: &InitSpec, d: usize, h: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dirs = match (spec.scheme, &spec.basis) {
        (InitScheme::TiedRandom, _) => (0..h * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (_, None) => {
            return Err(Error::invalid(format!(
                "init scheme {} needs a projection basis",
                spec.scheme.label()
            )))
        }
        (_, Some(basis)) => {
            if basis.d() != d {
                return Err(Error::DimensionMismatch {
                    what: "basis dimension",
                    expected: d,
                    found: basis.d(),
                });
            }
            let m = basis.m();
            // coefficients C (h × m) then W_dᵀ = C · Bᵀ
            let coeffs: Vec<f64> = (0..h * m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut bt = Vec::with_capacity(m * d);
            for col in basis.columns() {
                bt.extend_from_slice(col);
            }
            let mut dirs = vec![0.0; h * d];
            gemm(
                1.0,
                MatRef::row_major(&coeffs, h, m),
                MatRef::row_major(&bt, m, d),
                0.0,
                &mut dirs,
            );
            dirs
        }
    };
    for row in dirs.chunks_exact_mut(d) {
        let n = dot(row, row).sqrt();
        if !(n > 0.0) {
            return Err(Error::Numeric("drew a zero decoder direction".into()));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(dirs)
}

/// Least-squares factor `s²` for tied unit directions on the calibration batch.
fn optimal_square_scale(
    dirs: &[f64],
    b_dec: &[f64],
    calibration: &ActivationBatch,
    h: usize,
    k: usize,
) -> f64 {
    let (n, d) = (calibration.n(), calibration.d());
    let x: Vec<f64> = calibration.as_slice().iter().map(|&v| v as f64).collect();
    let mut pre = vec![0.0; n * h];
    gemm(
        1.0,
        MatRef::row_major(&x, n, d),
        MatRef::row_major(dirs, h, d).t(),
        0.0,
        &mut pre,
    );
    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = Vec::with_capacity(k);
    let mut xhat = vec![0.0; d];
    for i in 0..n {
        let row = &pre[i * h..(i + 1) * h];
        topk_indices(row, k, &mut idx);
        xhat.iter_mut().for_each(|v| *v = 0.0);
        for &j in &idx {
            axpy(row[j], &dirs[j * d..(j + 1) * d], &mut xhat);
        }
        let xi = &x[i * d..(i + 1) * d];
        num += xi.iter().zip(b_dec).zip(&xhat).map(|((a, b), r)| (a - b) * r).sum::<f64>();
        den += dot(&xhat, &xhat);
    }
    num / den
}

/// Builds tied initial parameters for an SAE with `h` features and sparsity
/// `k` on `d`-dimensional inputs.
pub fn init<T: Scalar>(
    spec: &InitSpec,
    d: usize,
    h: usize,
    k: usize,
    calibration: &ActivationBatch,
) -> Result<SaeParams<T>> {
    let mut params = SaeParams::<T>::zeros(d, h, k)?;
    if calibration.d() != d {
        return Err(Error::DimensionMismatch {
            what: "calibration batch dimension",
            expected: d,
            found: calibration.d(),
        });
    }
    let dirs = directions(spec, d, h)?;
    let b_dec = match spec.decoder_bias {
        DecoderBiasInit::Zero => vec![0.0; d],
        DecoderBiasInit::Mean => calibration.mean(),
    };
    let sq = optimal_square_scale(&dirs, &b_dec, calibration, h, k);
    let scale = if sq.is_finite() && sq > 0.0 {
        sq.sqrt()
    } else {
        log::warn!("calibration gave no positive decoder scale ({sq}); using unit norm");
        1.0
    };
    params.w_dec = dirs.iter().map(|v| T::from_f64(v * scale)).collect();
    params.w_enc = params.w_dec.clone();
    params.b_dec = b_dec.iter().map(|&v| T::from_f64(v)).collect();
    Ok(params)
}
