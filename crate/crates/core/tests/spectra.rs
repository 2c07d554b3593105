mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use sparsedict::spectra::{
    intrinsic_dimension, principal_directions, spectrum, top_subspace, variance_decomposition,
    StreamingMoments, DEFAULT_THRESHOLDS,
};
use sparsedict::store::{generate_synthetic, ActivationBatch, SyntheticSpectrumSpec};

/// Moments accumulated over uneven chunks, some merged from separate
/// accumulators.
fn chunked_moments(batch: &ActivationBatch, seed: u64) -> StreamingMoments {
    let mut r = rng(seed);
    let mut total = StreamingMoments::new(batch.d());
    let mut start = 0;
    while start < batch.n() {
        let end = (start + r.random_range(1..200)).min(batch.n());
        let chunk = batch.slice_rows(start, end).unwrap();
        if r.random_bool(0.5) {
            total.accumulate(&chunk).unwrap();
        } else {
            total.merge(&StreamingMoments::from_batch(&chunk)).unwrap();
        }
        start = end;
    }
    total
}

#[test]
fn streaming_spectrum_matches_dense_svd() {
    let mut r = rng(1);
    for instance in 0..20 {
        let n = r.random_range(100..=1000);
        let d = r.random_range(10..=64);
        let scales: Vec<f32> = (0..d).map(|_| r.random_range(0.1f32..3.0)).collect();
        let batch = scaled_batch(n, &scales, 100 + instance);
        let report = spectrum(&chunked_moments(&batch, instance), &[0.99], &[]).unwrap();
        let dense = dense_singular_values(&batch);
        for i in 0..10 {
            let rel = (report.singular_values[i] - dense[i]).abs() / dense[i];
            assert!(rel <= 1e-6, "instance {instance} (n={n}, d={d}) value {i}: rel {rel:e}");
        }
    }
}

#[test]
fn step_spectrum_recovers_rank() {
    let mut sv = vec![0.0; 64];
    sv[..16].iter_mut().for_each(|v| *v = 1.0);
    let batch = generate_synthetic(&SyntheticSpectrumSpec::new(sv, 7), 50_000).unwrap();
    let report = spectrum(&StreamingMoments::from_batch(&batch), &DEFAULT_THRESHOLDS, &[0.05]).unwrap();
    assert_eq!(report.intrinsic_dim(0.99), Some(16));
    let dims: Vec<usize> = report.intrinsic_dims.iter().map(|p| p.1).collect();
    assert!(dims.windows(2).all(|w| w[0] <= w[1]), "{dims:?}");
    assert_eq!(report.above(0.05), Some(16));
}

#[test]
fn variance_identity_on_random_triples() {
    let mut r = rng(2);
    for t in 0..100 {
        let n = r.random_range(20..300);
        let d = r.random_range(2..24);
        let z = uniform_batch(n, d, 2.0, 1000 + t);
        let w_o: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let e = random_unit(&mut r, d);
        let dec = variance_decomposition(&z, &w_o, std::slice::from_ref(&e)).unwrap();
        let (var_o, var_z, gain) = (dec.var_o[0], dec.var_z_hat[0], dec.wo_gain[0]);
        assert!((var_o - var_z * gain).abs() <= 1e-5 * var_o, "triple {t}");

        // var_o recomputed from an explicit product
        let zm = DMatrix::from_fn(n, d, |i, j| z.row(i)[j] as f64);
        let wm = DMatrix::from_row_slice(d, d, &w_o);
        let proj: Vec<f64> = (&zm * &wm * nalgebra::DVector::from_vec(e)).iter().copied().collect();
        assert!((sample_variance(&proj) - var_o).abs() <= 1e-9 * var_o.max(1.0));
    }
}

#[test]
fn null_space_direction_is_flagged() {
    let z = uniform_batch(200, 3, 1.0, 9);
    // W_O annihilates e_3: its third column is zero
    let w_o = vec![1.0, 2.0, 0.0, 0.5, -1.0, 0.0, 2.0, 1.0, 0.0];
    let dec = variance_decomposition(&z, &w_o, &[vec![0.0, 0.0, 1.0]]).unwrap();
    assert!(dec.null_direction[0]);
    assert_eq!(dec.var_o[0], 0.0);
    assert_eq!(dec.wo_gain[0], 0.0);
}

#[test]
fn principal_directions_diagonalize_output_covariance() {
    let z = scaled_batch(800, &[3.0, 2.0, 1.5, 1.0, 0.5, 0.25], 4);
    let d = z.d();
    let mut r = rng(5);
    let w_o: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let dirs = principal_directions(&z, &w_o).unwrap();
    let dec = variance_decomposition(&z, &w_o, &dirs).unwrap();

    let zm = DMatrix::from_fn(z.n(), d, |i, j| z.row(i)[j] as f64);
    let o = &zm * DMatrix::from_row_slice(d, d, &w_o);
    let mean = o.row_mean();
    let centered = DMatrix::from_fn(o.nrows(), d, |i, j| o[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (z.n() - 1) as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (i, (v, want)) in dec.var_o.iter().zip(&eig).enumerate() {
        assert!((v - want).abs() <= 1e-8 * eig[0], "direction {i}: {v} vs {want}");
    }
}

#[test]
fn top_subspace_projector_matches_dense_eigenvectors() {
    let batch = scaled_batch(2000, &[4.0, 3.0, 2.0, 1.0, 0.5, 0.3, 0.2, 0.1], 6);
    let d = batch.d();
    let m = 3;
    let basis = top_subspace(&StreamingMoments::from_batch(&batch), m).unwrap();
    assert!(basis.orthonormality_error() < 1e-12);

    let xm = DMatrix::from_fn(batch.n(), d, |i, j| batch.row(i)[j] as f64);
    let mean = xm.row_mean();
    let c = DMatrix::from_fn(batch.n(), d, |i, j| xm[(i, j)] - mean[j]);
    let eig = SymmetricEigen::new(c.transpose() * &c);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut want = DMatrix::<f64>::zeros(d, d);
    for &j in &order[..m] {
        let v = eig.eigenvectors.column(j);
        want += &v * v.transpose();
    }
    let got = DMatrix::from_row_slice(d, d, &basis.projector());
    assert!((got - want).norm() < 1e-9);
}

proptest! {
    #[test]
    fn intrinsic_dimension_is_monotone_in_threshold(
        mut values in prop::collection::vec(0.0f64..10.0, 1..40),
        taus in prop::collection::vec(0.01f64..0.99, 2..6),
    ) {
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assume!(values[0] > 0.0);
        let mut taus = taus;
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let dims: Vec<usize> = taus.iter().map(|&t| intrinsic_dimension(&values, t).unwrap()).collect();
        prop_assert!(dims.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(dims.iter().all(|&k| k >= 1 && k <= values.len()));
    }

    #[test]
    fn merge_order_does_not_matter(seed in 0u64..1000, split in 2usize..98) {
        let batch = uniform_batch(100, 5, 3.0, seed);
        let mut a = StreamingMoments::from_batch(&batch.slice_rows(0, split).unwrap());
        let b = StreamingMoments::from_batch(&batch.slice_rows(split, 100).unwrap());
        a.merge(&b).unwrap();
        let whole = StreamingMoments::from_batch(&batch);
        for (x, y) in a.scatter().iter().zip(whole.scatter()) {
            prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
        for (x, y) in a.mean().iter().zip(whole.mean()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
