use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{symmetric_eigen, StreamingMoments, SymmetricEigen};

/// Relative slack on the cumulative-variance comparison so that a threshold
/// hit exactly in exact arithmetic is not missed by one ulp.
const CUMULATIVE_SLACK: f64 = 1e-12;

/// Smallest `k` whose leading `k` squared values carry at least `tau` of the
/// total squared mass.
pub fn intrinsic_dimension(singular_values: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} outside (0, 1)")));
    }
    check_sorted(singular_values)?;
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::Numeric("spectrum is identically zero".into()));
    }
    let target = tau * total * (1.0 - CUMULATIVE_SLACK);
    let mut cum = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        cum += s * s;
        if cum >= target {
            return Ok(i + 1);
        }
    }
    Ok(singular_values.len())
}

/// Number of values strictly above `fraction · σ₁`.
pub fn count_above_fraction(singular_values: &[f64], fraction: f64) -> Result<usize> {
    check_sorted(singular_values)?;
    let cut = fraction * singular_values[0];
    Ok(singular_values.iter().filter(|s| **s > cut).count())
}

fn check_sorted(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("spectrum values must be finite and non-negative"));
    }
    if values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("spectrum values must be non-increasing"));
    }
    Ok(())
}

/// Eigendecomposition of a covariance snapshot, shared by the spectrum report
/// and subspace extraction so one eigensolve serves both.
#[derive(Debug, Clone)]
pub struct CovarianceEigen {
    pub(crate) count: u64,
    pub(crate) eigen: SymmetricEigen,
}

impl CovarianceEigen {
    pub fn from_moments(moments: &StreamingMoments) -> Result<Self> {
        let cov = moments.covariance()?;
        Ok(Self {
            count: moments.count(),
            eigen: symmetric_eigen(&cov, moments.d())?,
        })
    }

    pub fn d(&self) -> usize {
        self.eigen.d
    }

    /// Square roots of the eigenvalues, clamped at zero.
    pub fn singular_values(&self) -> Vec<f64> {
        self.eigen.values.iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn eigen(&self) -> &SymmetricEigen {
        &self.eigen
    }

    pub fn report(&self, thresholds: &[f64], fractions: &[f64]) -> Result<SpectrumReport> {
        let singular_values = self.singular_values();
        let total_variance = singular_values.iter().map(|s| s * s).sum();
        let intrinsic_dims = thresholds
            .iter()
            .map(|&t| intrinsic_dimension(&singular_values, t).map(|k| (t, k)))
            .collect::<Result<_>>()?;
        let above_fraction = fractions
            .iter()
            .map(|&f| count_above_fraction(&singular_values, f).map(|c| (f, c)))
            .collect::<Result<_>>()?;
        Ok(SpectrumReport {
            hook_point: "custom".into(),
            n: self.count,
            d: self.d(),
            singular_values,
            total_variance,
            intrinsic_dims,
            above_fraction,
            metadata: BTreeMap::new(),
        })
    }
}

/// Eigendecomposes `scatter/(count−1)` and fills in the derived statistics.
pub fn spectrum(
    moments: &StreamingMoments,
    thresholds: &[f64],
    fractions: &[f64],
) -> Result<SpectrumReport> {
    CovarianceEigen::from_moments(moments)?.report(thresholds, fractions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub hook_point: String,
    pub n: u64,
    pub d: usize,
    pub singular_values: Vec<f64>,
    pub total_variance: f64,
    /// `(τ, k)` pairs in the order requested.
    pub intrinsic_dims: Vec<(f64, usize)>,
    /// `(fraction, count)` pairs in the order requested.
    pub above_fraction: Vec<(f64, usize)>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumJson {
    hook_point: String,
    n: u64,
    d: usize,
    singular_values: Vec<f64>,
    #[serde(default)]
    total_variance: Option<f64>,
    intrinsic_dims: BTreeMap<String, usize>,
    above_fraction: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

fn parse_keyed(map: BTreeMap<String, usize>, what: &str) -> Result<Vec<(f64, usize)>> {
    let mut out = map
        .into_iter()
        .map(|(k, v)| {
            k.parse::<f64>()
                .map(|t| (t, v))
                .map_err(|_| Error::InvalidHeader(format!("bad {what} key {k:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

impl SpectrumReport {
    pub fn intrinsic_dim(&self, tau: f64) -> Option<usize> {
        self.intrinsic_dims.iter().find(|(t, _)| *t == tau).map(|p| p.1)
    }

    pub fn above(&self, fraction: f64) -> Option<usize> {
        self.above_fraction.iter().find(|(f, _)| *f == fraction).map(|p| p.1)
    }

    pub fn to_json(&self) -> Result<String> {
        let json = SpectrumJson {
            hook_point: self.hook_point.clone(),
            n: self.n,
            d: self.d,
            singular_values: self.singular_values.clone(),
            total_variance: Some(self.total_variance),
            intrinsic_dims: self.intrinsic_dims.iter().map(|(t, k)| (t.to_string(), *k)).collect(),
            above_fraction: self.above_fraction.iter().map(|(f, c)| (f.to_string(), *c)).collect(),
            metadata: self.metadata.clone(),
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: SpectrumJson = serde_json::from_str(text)?;
        if json.singular_values.len() != json.d {
            return Err(Error::DimensionMismatch {
                what: "singular value count",
                expected: json.d,
                found: json.singular_values.len(),
            });
        }
        let total_variance = json
            .total_variance
            .unwrap_or_else(|| json.singular_values.iter().map(|s| s * s).sum());
        Ok(Self {
            hook_point: json.hook_point,
            n: json.n,
            d: json.d,
            singular_values: json.singular_values,
            total_variance,
            intrinsic_dims: parse_keyed(json.intrinsic_dims, "threshold")?,
            above_fraction: parse_keyed(json.above_fraction, "fraction")?,
            metadata: json.metadata,
        })
    }
}
