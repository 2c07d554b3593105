mod common;

use common::*;
use sparsedict::sae::*;
use sparsedict::spectra::{random_subspace, top_subspace, StreamingMoments};
use sparsedict::store::{generate_synthetic, ActivationBatch};

const FD_STEP: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-4;

struct Case {
    p: SaeParams<f64>,
    x: ActivationBatch,
    dead: Vec<bool>,
}

fn case(seed: u64) -> Case {
    let (d, h, k) = (6, 12, 3);
    let p = random_params(d, h, k, seed);
    let x = uniform_batch(7, d, 2.0, seed + 100);
    let dead = (0..h).map(|j| (j + seed as usize) % 3 != 0).collect();
    Case { p, x, dead }
}

fn aux_sets(p: &SaeParams<f64>, x: &ActivationBatch, dead: &[bool], k_aux: usize) -> Vec<Vec<usize>> {
    (0..x.n())
        .map(|i| {
            let pre = dense_pre(p, x.row(i));
            let masked: Vec<f64> = pre
                .iter()
                .zip(dead)
                .map(|(&v, &dd)| if dd { v } else { f64::NEG_INFINITY })
                .collect();
            let n_dead = dead.iter().filter(|b| **b).count();
            full_sort_topk(&masked, k_aux.min(n_dead))
        })
        .collect()
}

fn check(c: &Case, aux: Option<(usize, f64)>) -> f64 {
    let fwd = forward(&c.p, &c.x).unwrap();
    let main = dense_active_sets(&c.p, &c.x);
    for (i, set) in main.iter().enumerate() {
        let got: Vec<usize> = fwd.active_row(i).iter().map(|&j| j as usize).collect();
        assert_eq!(&got, set, "active set of input {i}");
    }
    let res = residual(&fwd, &c.x);
    let (grads, oracle) = match aux {
        None => (
            backward(&c.p, &c.x, &fwd, None).unwrap(),
            PinnedLoss { x: &c.x, main, aux: None },
        ),
        Some((k_aux, alpha)) => {
            let af = aux_forward(&c.p, &fwd, &c.dead, k_aux).unwrap().unwrap();
            let g = backward(&c.p, &c.x, &fwd, Some((&af, &res, alpha))).unwrap();
            let sets = aux_sets(&c.p, &c.x, &c.dead, k_aux);
            (g, PinnedLoss { x: &c.x, main, aux: Some((sets, res.clone(), alpha)) })
        }
    };
    let fd = finite_difference(&c.p, |q| oracle.eval(q), FD_STEP);
    let analytic = [&grads.w_enc, &grads.b_enc, &grads.w_dec, &grads.b_dec];
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, n)| max_relative_error(a, n, 1e-9))
        .fold(0.0, f64::max)
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let err = check(&case(seed), None);
        assert!(err <= GRAD_TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn auxk_gradient_matches_finite_differences() {
    for seed in 0..5 {
        for k_aux in [2, 4, 100] {
            let err = check(&case(seed), Some((k_aux, DEFAULT_AUX_ALPHA)));
            assert!(err <= GRAD_TOL, "seed {seed}, k_aux {k_aux}: relative error {err:e}");
        }
    }
}

#[test]
fn full_loss_is_sum_of_components() {
    let c = case(9);
    let fwd = forward(&c.p, &c.x).unwrap();
    let res = residual(&fwd, &c.x);
    let recon = reconstruction_loss(&fwd, &c.x).unwrap();
    let aux = aux_loss(&c.p, &c.x, &res, &c.dead, 4).unwrap();
    let oracle = PinnedLoss {
        x: &c.x,
        main: dense_active_sets(&c.p, &c.x),
        aux: Some((aux_sets(&c.p, &c.x, &c.dead, 4), res.clone(), DEFAULT_AUX_ALPHA)),
    };
    let full = recon + DEFAULT_AUX_ALPHA * aux;
    assert!((full - oracle.eval(&c.p)).abs() <= 1e-10 * full.abs().max(1.0));
    assert_eq!(DEFAULT_AUX_ALPHA, 1.0 / 32.0);
}

#[test]
fn aux_loss_single_feature_closed_form() {
    // one dead feature whose decoder column is the residual direction u and
    // whose pre-activation is 1: the aux reconstruction is exactly u
    let (d, h) = (3, 4);
    let mut p = SaeParams::<f64>::zeros(d, h, 1).unwrap();
    let u = [0.6, 0.8, 0.0];
    p.w_dec[3 * d..4 * d].copy_from_slice(&u);
    p.b_enc[3] = 1.0;
    p.b_enc[0] = 5.0; // always the main-path winner
    let x = ActivationBatch::new(vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5], 2, d).unwrap();
    let fwd = forward(&p, &x).unwrap();
    let res = residual(&fwd, &x);
    let dead = [false, false, false, true];
    let got = aux_loss(&p, &x, &res, &dead, 8).unwrap();
    let expected: f64 = (0..2)
        .map(|i| (0..d).map(|r| (res[i * d + r] - u[r]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / 2.0;
    assert!((got - expected).abs() < 1e-12);
    assert_eq!(aux_loss(&p, &x, &res, &[false; 4], 8).unwrap(), 0.0);
}

#[test]
fn reconstruction_loss_examples() {
    let p = SaeParams::<f64>::zeros(2, 2, 1).unwrap();
    let x = ActivationBatch::new(vec![1.0, 0.0], 1, 2).unwrap();
    assert_eq!(reconstruction_loss(&forward(&p, &x).unwrap(), &x).unwrap(), 1.0);
    let x = ActivationBatch::new(vec![1.0, 0.0, 0.0, 3.0f32.sqrt()], 2, 2).unwrap();
    let l = reconstruction_loss(&forward(&p, &x).unwrap(), &x).unwrap();
    assert!((l - 2.0).abs() < 1e-6);
}

/// NMSE of tied directions at global scale `s` on `x`, computed densely.
fn nmse_at_scale(dirs: &SaeParams<f64>, s: f64, x: &ActivationBatch) -> f64 {
    let mut p = dirs.clone();
    p.w_dec.iter_mut().for_each(|v| *v *= s);
    p.w_enc = p.w_dec.clone();
    let d = p.d();
    let mean: Vec<f64> = (0..d)
        .map(|c| x.rows().map(|r| r[c] as f64).sum::<f64>() / x.n() as f64)
        .collect();
    let (mut err, mut energy) = (0.0, 0.0);
    for i in 0..x.n() {
        let row = x.row(i);
        let pre = dense_pre(&p, row);
        let set = full_sort_topk(&pre, p.k());
        for r in 0..d {
            let xhat = p.b_dec[r] + set.iter().map(|&j| p.w_dec[j * d + r] * pre[j]).sum::<f64>();
            err += (row[r] as f64 - xhat).powi(2);
            energy += (row[r] as f64 - mean[r]).powi(2);
        }
    }
    err / energy
}

#[test]
fn init_scale_beats_scale_grid() {
    let x = generate_synthetic(&low_rank_spec(3), 600).unwrap();
    let moments = StreamingMoments::from_batch(&x);
    let specs = [
        InitSpec::tied(1),
        InitSpec::subspace(InitScheme::ActiveSubspace, top_subspace(&moments, 16).unwrap(), 2),
        InitSpec::subspace(InitScheme::RandomSubspace, random_subspace(64, 16, 5).unwrap(), 3),
    ];
    for spec in specs {
        let p: SaeParams<f64> = init(&spec, 64, 128, 4, &x).unwrap();
        let norm = p.w_dec[..64].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut unit = p.clone();
        unit.w_dec.iter_mut().for_each(|v| *v /= norm);
        let at_init = nmse_at_scale(&unit, norm, &x);
        for i in 0..100 {
            let s = norm * (0.02 + 0.03 * i as f64);
            let other = nmse_at_scale(&unit, s, &x);
            assert!(
                at_init <= other + 1e-12,
                "{:?}: scale {s} gives {other} < {at_init}",
                spec.scheme
            );
        }
    }
}

#[test]
fn subspace_init_stays_in_span() {
    let x = generate_synthetic(&low_rank_spec(4), 500).unwrap();
    let basis = top_subspace(&StreamingMoments::from_batch(&x), 16).unwrap();
    let spec = InitSpec::subspace(InitScheme::ActiveSubspace, basis.clone(), 6);
    let p: SaeParams<f32> = init(&spec, 64, 256, 8, &x).unwrap();
    for j in 0..256 {
        let col: Vec<f64> = p.decoder_column(j).iter().map(|&v| v as f64).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(basis.out_of_span_norm(&col) <= 1e-6 * norm);
    }
    assert!(p.w_enc.iter().zip(&p.w_dec).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn full_width_subspace_matches_norm_checks() {
    let x = generate_synthetic(&low_rank_spec(5), 300).unwrap();
    let basis = top_subspace(&StreamingMoments::from_batch(&x), 64).unwrap();
    let spec = InitSpec::subspace(InitScheme::ActiveSubspace, basis.clone(), 6);
    let p: SaeParams<f64> = init(&spec, 64, 100, 4, &x).unwrap();
    let n0 = p.decoder_column(0).iter().map(|v| v * v).sum::<f64>();
    for j in 0..100 {
        let col = p.decoder_column(j);
        let n = col.iter().map(|v| v * v).sum::<f64>();
        assert!((n - n0).abs() < 1e-9 * n0);
        assert!(basis.out_of_span_norm(col) <= 1e-6 * n.sqrt());
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let x = uniform_batch(50, 8, 1.0, 2);
    let params: SaeParams<f32> = init(&InitSpec::tied(4), 8, 32, 4, &x).unwrap();
    let ckpt = SaeCheckpoint {
        params,
        scheme: "tied".into(),
        seed: 4,
        step: 17,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sae.ckpt");
    write_checkpoint(&ckpt, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, ckpt);
}
