use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng))
}

fn standardize_cols(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows() as f64;
    let mut out = l.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let std = (col.norm_squared() / n).sqrt();
        col /= std;
    }
    out
}

fn center(y: &DVector<f64>) -> DVector<f64> {
    let mean = y.sum() / y.len() as f64;
    y.add_scalar(-mean)
}

#[test]
fn a_q_and_prior_logit() {
    let h = SsHyperparams::default();
    let s = VbState::initial(&[0.5; 21], &h, 1000);
    assert!((s.a_q - 510.5001).abs() < 1e-9);
    assert!((logit(0.1) - (-2.197_224_577)).abs() < 1e-8);
}

#[test]
fn bernoulli_term_vanishes_at_prior() {
    assert_eq!(bernoulli_term(&[0.1; 7], 0.1), 0.0);
    assert!(bernoulli_term(&[0.9, 0.1], 0.1) < 0.0);
}

#[test]
fn sbl_finds_the_generating_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = standardize_cols(&normal_matrix(&mut rng, 300, 6));
    let y = l.column(3).into_owned();
    let (w0, fallback) = sbl_initialize(&l, &y, 0.1).unwrap();
    assert!(!fallback);
    assert!(w0[3] > 0.9, "{w0:?}");
    let mut others: Vec<f64> = w0
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != 3)
        .map(|(_, v)| *v)
        .collect();
    others.sort_by(f64::total_cmp);
    assert!(others[others.len() / 2] < 0.2, "{w0:?}");
}

fn orthogonal_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let raw = standardize_cols(&normal_matrix(rng, n, k));
    standardize_cols(&(raw.qr().q() * (n as f64).sqrt()))
}

/// With `LᵀL = N I` the evidence maximiser has a closed form given the
/// noise precision: `γ_k = max(0, 1 - N / (β c_k²))`.
fn orthogonal_gamma(l: &DMatrix<f64>, y: &DVector<f64>, beta: f64) -> Vec<f64> {
    let n = l.nrows() as f64;
    let c = l.tr_mul(y);
    c.iter().map(|ck| (1.0 - n / (beta * ck * ck)).max(0.0)).collect()
}

#[test]
fn sbl_matches_orthogonal_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let l = orthogonal_design(&mut rng, 400, 5);
        let theta = DVector::from_fn(5, |_, _| if rng.random::<f64>() < 0.4 { 0.3 } else { 0.0 });
        let y = center(&(&l * theta + DVector::from_fn(400, |_, _| StandardNormal.sample(&mut rng))));
        let r = sbl(&RegressionStats::from_design(&l, &y).unwrap());
        assert!(r.converged);
        let oracle = orthogonal_gamma(&l, &y, r.beta);
        for (g, o) in r.gamma.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-4, "{:?} vs {oracle:?}", r.gamma);
        }
    }
}

#[test]
fn sbl_on_pure_noise_stays_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l = orthogonal_design(&mut rng, 400, 5);
    let y = center(&DVector::from_fn(400, |_, _| StandardNormal.sample(&mut rng)));
    let stats = RegressionStats::from_design(&l, &y).unwrap();
    // A pure-noise column keeps γ >= 0.5 only when its t-statistic exceeds
    // √2, so the expectation comes from the closed form, not a guess.
    let oracle = orthogonal_gamma(&l, &y, sbl(&stats).beta);
    let (w0, _) = sbl_initialize(&l, &y, 0.1).unwrap();
    for (w, o) in w0.iter().zip(&oracle) {
        assert_eq!(*w < 0.5, *o < 0.5, "{w0:?} vs {oracle:?}");
        assert!((w - o.clamp(0.01, 0.99)).abs() < 1e-4);
    }
    let noisy_cols = oracle.iter().filter(|g| **g >= 0.5).count();
    assert!(noisy_cols <= 1);
}

#[test]
fn sbl_single_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = standardize_cols(&normal_matrix(&mut rng, 100, 1));
    let y = l.column(0) * 2.0;
    let (w0, _) = sbl_initialize(&l, &y, 0.1).unwrap();
    assert!(w0[0] > 0.9);
}

#[test]
fn scalar_problem_two_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = standardize_cols(&normal_matrix(&mut rng, 200, 1));
    let y = l.column(0).into_owned();
    let h = SsHyperparams::default();
    let stats = RegressionStats::from_design(&l, &y).unwrap();
    let (w0, _) = sbl_initialize(&l, &y, h.p0).unwrap();
    let mut s = VbState::initial(&w0, &h, stats.n);
    for _ in 0..2 {
        s = vb_iteration(&s, &stats, &h).unwrap();
    }
    assert!(s.w[0] > 0.99);
    assert!((s.mu[0] - 1.0).abs() < 0.02);
    assert!((s.tau - s.a_q / s.b_q).abs() <= 1e-12 * s.tau);
}

#[test]
fn pure_noise_selects_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = standardize_cols(&normal_matrix(&mut rng, 500, 10));
    let y = center(&DVector::from_fn(500, |_, _| StandardNormal.sample(&mut rng)));
    let post = run_vb(&l, &y, &SsHyperparams::default()).unwrap();
    assert!(post.selected.is_empty(), "{:?}", post.pip);
    assert!(post.converged);
    assert!(post.mu_theta.iter().all(|v| *v == 0.0));
}

#[test]
fn converged_trace_ends_flat_and_rises() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let l = standardize_cols(&normal_matrix(&mut rng, 300, 8));
    let theta = DVector::from_vec(vec![0.0, 3.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
    let noise = DVector::from_fn(300, |_, _| StandardNormal.sample(&mut rng));
    let y = center(&(&l * &theta + noise * 0.5));
    let h = SsHyperparams::default();
    let post = run_vb(&l, &y, &h).unwrap();
    assert!(post.converged);
    assert_eq!(post.selected, vec![1, 4]);
    let t = &post.elbo_trace;
    for pair in t.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-8);
    }
    assert!((t[t.len() - 1] - t[t.len() - 2]).abs() < h.rho);
    // Off-support entries are exactly zero.
    for j in [0, 2, 3, 5, 6, 7] {
        assert_eq!(post.mu_theta[j], 0.0);
        assert!(post.sigma_theta.row(j).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn uncentred_input_is_rejected() {
    let l = DMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
    let y = DVector::from_vec(vec![0.0, 0.0, 0.0]);
    assert!(run_vb(&l, &y, &SsHyperparams::default()).is_err());
}

#[test]
fn hyperparameters_are_validated() {
    let h = SsHyperparams {
        p0: 1.0,
        ..Default::default()
    };
    assert!(h.validate().is_err());
    assert!(SsHyperparams::default().validate().is_ok());
}

#[test]
fn noise_free_training_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = standardize_cols(&normal_matrix(&mut rng, 200, 6));
    let theta = DVector::from_vec(vec![1.5, 0.0, -4.0, 0.0, 0.0, 2.0]);
    let y = center(&(&l * &theta));
    let h = SsHyperparams {
        v_s: 1e10,
        ..Default::default()
    };
    let post = run_vb(&l, &y, &h).unwrap();
    let (mean, cov) = predict(&l, &post).unwrap();
    let err = (&mean - &y).amax();
    assert!(err < 1e-6, "max error {err}");
    assert!(cov
        .diagonal()
        .iter()
        .all(|d| *d >= post.noise_variance() * (1.0 - 1e-12)));
}

#[test]
fn prediction_edge_cases() {
    let post = PosteriorSummary {
        pip: vec![0.9, 0.1],
        selected: vec![0],
        mu_theta: DVector::from_vec(vec![2.0, 0.0]),
        sigma_theta: DMatrix::zeros(2, 2),
        a_star: 10.0,
        b_star: 2.0,
        intercept: 0.0,
        elbo_trace: vec![],
        converged: true,
        iterations: 1,
        sbl_fallback: false,
    };
    let l = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 0.0]);
    let (mean, cov) = predict(&l, &post).unwrap();
    assert_eq!(mean[0], 2.0);
    assert_eq!(mean[1], 0.0);
    assert!((cov[(1, 1)] - 0.2).abs() < 1e-15);
    assert!(predict(&DMatrix::zeros(1, 3), &post).is_err());
}

#[test]
fn scaling_the_target_keeps_the_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let l = standardize_cols(&normal_matrix(&mut rng, 300, 8));
    let theta = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0, -0.7, 0.0, 0.0]);
    let noise = DVector::from_fn(300, |_, _| StandardNormal.sample(&mut rng));
    let y = center(&(&l * &theta + noise * 0.2));
    let h = SsHyperparams::default();
    let stats = RegressionStats::from_design(&l, &y).unwrap();
    let base = run_vb_stats(&stats, &h).unwrap();
    for c in [0.1, 7.0, 1e4] {
        let scaled = run_vb_stats(&stats.scale_target(c), &h).unwrap();
        assert_eq!(scaled.selected, base.selected);
        for &j in &base.selected {
            let rel = (scaled.mu_theta[j] / (c * base.mu_theta[j]) - 1.0).abs();
            assert!(rel < 0.01, "c={c}: {rel}");
        }
    }
}

#[test]
fn jacobi_sweep_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = standardize_cols(&normal_matrix(&mut rng, 200, 5));
    let theta = DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0, 1.0]);
    let noise = DVector::from_fn(200, |_, _| StandardNormal.sample(&mut rng));
    let y = center(&(&l * &theta + noise * 0.3));
    let h = SsHyperparams {
        sweep: Sweep::Jacobi,
        ..Default::default()
    };
    let post = run_vb(&l, &y, &h).unwrap();
    assert_eq!(post.selected, vec![0, 4]);
}
