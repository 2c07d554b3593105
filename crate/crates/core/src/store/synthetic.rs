//! Low-rank Gaussian activation generator.
//!
//! Rows are `x = μ + Σ_l g_l · s_l · v_l` with `g ~ N(0, I)` and `v_l` the
//! columns of a seeded random rotation, so the population covariance is
//! `V diag(s²) Vᵀ` and the normalized singular values (σ/√(n−1) of the centered
//! data) converge to `s`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_orthonormal, gemm, MatRef};
use crate::store::ActivationBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpectrumSpec {
    pub d: usize,
    /// Target singular values, non-increasing and non-negative, length `d`.
    pub singular_values: Vec<f64>,
    pub mean: Option<Vec<f64>>,
    pub seed: u64,
}

impl SyntheticSpectrumSpec {
    pub fn new(singular_values: Vec<f64>, seed: u64) -> Self {
        Self {
            d: singular_values.len(),
            singular_values,
            mean: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.singular_values.len() != self.d {
            return Err(Error::DimensionMismatch {
                what: "target singular value count",
                expected: self.d,
                found: self.singular_values.len(),
            });
        }
        if let Some(bad) = self
            .singular_values
            .iter()
            .position(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(Error::invalid(format!(
                "target singular value {bad} is negative or non-finite"
            )));
        }
        if self.singular_values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("target singular values must be non-increasing"));
        }
        if let Some(mean) = &self.mean {
            if mean.len() != self.d {
                return Err(Error::DimensionMismatch {
                    what: "mean vector length",
                    expected: self.d,
                    found: mean.len(),
                });
            }
        }
        Ok(())
    }
}

/// Stateful sampler: repeated calls continue one deterministic stream.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    d: usize,
    /// `rank × d`, row `l` is `s_l · v_lᵀ` for the non-zero targets.
    factors: Vec<f64>,
    rank: usize,
    mean: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticGenerator {
    pub fn new(spec: &SyntheticSpectrumSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        // Separate streams for the rotation and the samples so that changing n
        // never changes the geometry.
        let mut basis_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        basis_rng.set_stream(1);
        let rotation = gaussian_orthonormal(&mut basis_rng, d, d)?;
        let rank = spec.singular_values.iter().take_while(|s| **s > 0.0).count();
        let mut factors = vec![0.0; rank * d];
        for l in 0..rank {
            let s = spec.singular_values[l];
            for (dst, v) in factors[l * d..(l + 1) * d]
                .iter_mut()
                .zip(&rotation[l * d..(l + 1) * d])
            {
                *dst = s * v;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        Ok(Self {
            d,
            factors,
            rank,
            mean: spec.mean.clone().unwrap_or_else(|| vec![0.0; d]),
            rng,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sample(&mut self, n: usize) -> Result<ActivationBatch> {
        if n == 0 {
            return Err(Error::invalid("synthetic sample count must be at least 1"));
        }
        let d = self.d;
        let mut rows = vec![0.0f64; n * d];
        if self.rank > 0 {
            let g: Vec<f64> = (0..n * self.rank)
                .map(|_| StandardNormal.sample(&mut self.rng))
                .collect();
            gemm(
                1.0,
                MatRef::row_major(&g, n, self.rank),
                MatRef::row_major(&self.factors, self.rank, d),
                0.0,
                &mut rows,
            );
        }
        let data = rows
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&self.mean).map(|(x, m)| (m + x) as f32))
            .collect();
        ActivationBatch::new(data, n, d)
    }
}

/// Draws `n` rows from `spec`; deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpectrumSpec, n: usize) -> Result<ActivationBatch> {
    SyntheticGenerator::new(spec)?.sample(n)
}

/// Expands a spectrum preset for dimension `d`:
/// `powerlaw:<exponent>` gives `(i+1)^-exponent`, `step:<rank>` gives `rank`
/// ones followed by zeros, and `step:<rank>:<floor>` fills the tail with
/// `floor` instead. Anything else is read as comma/whitespace
/// separated values.
pub fn parse_spectrum(text: &str, d: usize) -> Result<Vec<f64>> {
    let text = text.trim();
    let values = if let Some(exp) = text.strip_prefix("powerlaw:") {
        let exp: f64 = exp
            .parse()
            .map_err(|_| Error::invalid(format!("bad power-law exponent {exp:?}")))?;
        (0..d).map(|i| ((i + 1) as f64).powf(-exp)).collect()
    } else if let Some(rest) = text.strip_prefix("step:") {
        let (rank, floor) = rest.split_once(':').unwrap_or((rest, "0"));
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::invalid(format!("bad step rank {rank:?}")))?;
        let floor: f64 = floor
            .parse()
            .ok()
            .filter(|f: &f64| (0.0..=1.0).contains(f))
            .ok_or_else(|| Error::invalid(format!("bad step floor {floor:?}")))?;
        if rank > d {
            return Err(Error::invalid(format!("step rank {rank} exceeds dimension {d}")));
        }
        (0..d).map(|i| if i < rank { 1.0 } else { floor }).collect()
    } else {
        let values = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad spectrum value {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                what: "spectrum value count",
                expected: d,
                found: values.len(),
            });
        }
        values
    };
    SyntheticSpectrumSpec::new(values.clone(), 0).validate()?;
    Ok(values)
}
