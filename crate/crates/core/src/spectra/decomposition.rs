//! Splits the variance of an attention output `O = Z·W_O` along a unit
//! direction `ê` into the head-output part `Var(Z v̂)` and the projection gain
//! `‖v‖²`, with `v = W_O ê`:
//!
//! ```text
//! Var(O ê) = Var(Z v̂) · ‖v‖²
//! ```
//!
//! `var_o` is measured on the materialized `O`, `var_z_hat` on `Z` directly, so
//! the identity doubles as a consistency check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, MatRef};
use crate::spectra::{CovarianceEigen, StreamingMoments};
use crate::store::ActivationBatch;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub directions: Vec<Vec<f64>>,
    pub var_o: Vec<f64>,
    pub var_z_hat: Vec<f64>,
    pub wo_gain: Vec<f64>,
    /// Directions in the null space of `W_O` (v = 0); their `var_z_hat` is
    /// reported as 0.
    pub null_direction: Vec<bool>,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn check_wo(w_o: &[f64], d: usize) -> Result<()> {
    if w_o.len() != d * d {
        return Err(Error::DimensionMismatch {
            what: "W_O entries",
            expected: d * d,
            found: w_o.len(),
        });
    }
    Ok(())
}

/// Materializes `O = Z·W_O` in f64, row-major `n × d`.
fn attention_output(z: &[f64], n: usize, d: usize, w_o: &[f64]) -> Vec<f64> {
    let mut o = vec![0.0; n * d];
    gemm(
        1.0,
        MatRef::row_major(z, n, d),
        MatRef::row_major(w_o, d, d),
        0.0,
        &mut o,
    );
    o
}

/// `w_o` is row-major `d × d` with `O = Z·W_O`.
pub fn variance_decomposition(
    z: &ActivationBatch,
    w_o: &[f64],
    directions: &[Vec<f64>],
) -> Result<VarianceDecomposition> {
    let (n, d) = (z.n(), z.d());
    check_wo(w_o, d)?;
    if n < 2 {
        return Err(Error::invalid("variance needs at least 2 rows of Z"));
    }
    for (i, e) in directions.iter().enumerate() {
        if e.len() != d {
            return Err(Error::DimensionMismatch {
                what: "direction length",
                expected: d,
                found: e.len(),
            });
        }
        let norm = dot(e, e).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!(
                "direction {i} has norm {norm}, expected unit length"
            )));
        }
    }
    let zf: Vec<f64> = z.as_slice().iter().map(|&v| v as f64).collect();
    let o = attention_output(&zf, n, d, w_o);
    let wo_scale = w_o.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut out = VarianceDecomposition {
        directions: directions.to_vec(),
        var_o: Vec::with_capacity(directions.len()),
        var_z_hat: Vec::with_capacity(directions.len()),
        wo_gain: Vec::with_capacity(directions.len()),
        null_direction: Vec::with_capacity(directions.len()),
    };
    let mut proj = vec![0.0; n];
    for e in directions {
        for (p, row) in proj.iter_mut().zip(o.chunks_exact(d)) {
            *p = dot(row, e);
        }
        out.var_o.push(sample_variance(&proj));

        let v: Vec<f64> = w_o.chunks_exact(d).map(|row| dot(row, e)).collect();
        let gain = dot(&v, &v);
        if gain.sqrt() <= 1e-12 * wo_scale.max(f64::MIN_POSITIVE) * (d as f64).sqrt() {
            out.wo_gain.push(0.0);
            out.var_z_hat.push(0.0);
            out.null_direction.push(true);
            continue;
        }
        let inv = 1.0 / gain.sqrt();
        let v_hat: Vec<f64> = v.iter().map(|x| x * inv).collect();
        for (p, row) in proj.iter_mut().zip(zf.chunks_exact(d)) {
            *p = dot(row, &v_hat);
        }
        out.var_z_hat.push(sample_variance(&proj));
        out.wo_gain.push(gain);
        out.null_direction.push(false);
    }
    Ok(out)
}

/// Right singular vectors of the centered `O = Z·W_O`, leading first.
pub fn principal_directions(z: &ActivationBatch, w_o: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (n, d) = (z.n(), z.d());
    check_wo(w_o, d)?;
    let zf: Vec<f64> = z.as_slice().iter().map(|&v| v as f64).collect();
    let o = attention_output(&zf, n, d, w_o);
    let o32: Vec<f32> = o.iter().map(|&v| v as f32).collect();
    let moments = StreamingMoments::from_batch(&ActivationBatch::new(o32, n, d)?);
    let basis = CovarianceEigen::from_moments(&moments)?.top_subspace(d)?;
    Ok(basis.columns().map(|c| c.to_vec()).collect())
}
