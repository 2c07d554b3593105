use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::store::ActivationBatch;

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "tokens",
    "nmse",
    "dead_count",
    "dead_frac",
    "l0",
    "loss_recon",
    "loss_aux",
];

/// One evaluation point. Losses are means over the training batches since
/// the previous evaluation; `nmse` and `l0` are measured on the held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub tokens: u64,
    pub nmse: f64,
    pub dead_count: usize,
    pub dead_frac: f64,
    pub l0: f64,
    pub loss_recon: f64,
    pub loss_aux: f64,
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Mean normalized MSE over the last three evaluations.
    pub nmse: f64,
    pub dead_count: usize,
    pub alive_count: usize,
    pub dead_frac: f64,
}

/// `Σ‖x − x̂‖² / Σ‖x − x̄‖²` with `x̄` the batch mean.
pub fn normalized_mse<T: Scalar>(batch: &ActivationBatch, recon: &[T]) -> Result<f64> {
    normalized_mse_about(batch, recon, &batch.mean())
}

/// Normalized MSE against a supplied reference mean.
pub fn normalized_mse_about<T: Scalar>(
    batch: &ActivationBatch,
    recon: &[T],
    mean: &[f64],
) -> Result<f64> {
    if recon.len() != batch.as_slice().len() {
        return Err(Error::DimensionMismatch {
            what: "reconstruction length",
            expected: batch.as_slice().len(),
            found: recon.len(),
        });
    }
    if mean.len() != batch.d() {
        return Err(Error::DimensionMismatch {
            what: "reference mean length",
            expected: batch.d(),
            found: mean.len(),
        });
    }
    let (mut err, mut energy) = (0.0f64, 0.0f64);
    for (row, rrow) in batch.rows().zip(recon.chunks_exact(batch.d())) {
        for ((&x, r), m) in row.iter().zip(rrow).zip(mean) {
            let x = x as f64;
            err += (x - r.as_f64()).powi(2);
            energy += (x - m).powi(2);
        }
    }
    if energy <= 0.0 {
        return Err(Error::Numeric("normalized MSE of a zero-variance batch".into()));
    }
    Ok(err / energy)
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record(METRICS_COLUMNS)?;
    }
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(data: Vec<f32>, n: usize, d: usize) -> ActivationBatch {
        ActivationBatch::new(data, n, d).unwrap()
    }

    #[test]
    fn examples() {
        let x = b(vec![0.0, 2.0], 2, 1);
        assert_eq!(normalized_mse(&x, &[0.0f64, 2.0]).unwrap(), 0.0);
        assert_eq!(normalized_mse(&x, &[1.0f64, 1.0]).unwrap(), 1.0);
        assert!((normalized_mse(&x, &[0.5f64, 1.5]).unwrap() - 0.25).abs() < 1e-15);
        let flat = b(vec![3.0, 3.0], 2, 1);
        assert!(normalized_mse(&flat, &[3.0f32, 3.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![MetricsRecord {
            step: 3,
            tokens: 768,
            nmse: 0.25,
            dead_count: 2,
            dead_frac: 0.125,
            l0: 4.0,
            loss_recon: 1.5,
            loss_aux: 0.0,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), recs);
    }
}
