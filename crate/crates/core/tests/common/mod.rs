//! Shared test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdeid_core::vb::{RegressionStats, SsHyperparams};

/// Centres every column and scales it to unit population standard deviation.
pub fn standardize_cols(l: &DMatrix<f64>) -> DMatrix<f64> {
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

pub fn center(y: &DVector<f64>) -> DVector<f64> {
    let mean = y.sum() / y.len() as f64;
    y.add_scalar(-mean)
}

/// A random sparse regression problem.
pub struct Instance {
    pub l: DMatrix<f64>,
    pub y: DVector<f64>,
    pub support: Vec<usize>,
    pub snr: f64,
}

/// `n × k` standardised Gaussian design, each column active with
/// probability 0.35 (at least one), weights `±U(0.5, 2)`, and Gaussian noise
/// sized so that `var(Lθ) / σ² = snr`.
pub fn sparse_instance(seed: u64, n: usize, k: usize, snr: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = standardize_cols(&DMatrix::from_fn(n, k, |_, _| -> f64 {
        StandardNormal.sample(&mut rng)
    }));
    let mut support: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() < 0.35).collect();
    if support.is_empty() {
        support.push(rng.random_range(0..k));
    }
    let mut theta = DVector::zeros(k);
    for &j in &support {
        let mag: f64 = rng.random_range(0.5..2.0);
        theta[j] = if rng.random::<bool>() { mag } else { -mag };
    }
    let signal = &l * &theta;
    let var = signal.norm_squared() / n as f64;
    let sigma = (var / snr).sqrt();
    let noise = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    });
    Instance {
        y: center(&(signal + noise)),
        l,
        support,
        snr,
    }
}

/// Exact posterior inclusion probabilities of the spike-and-slab model with
/// slab `θ_k ~ N(0, σ² v_s)`, noise `σ² ~ IG(a, b)`, `z_k ~ Bern(p0)`, by
/// enumerating all `2^K` supports. Constants shared by every support
/// (`N ln 2π`, `ln Γ(a + N/2)`, ...) are dropped.
pub fn exact_pips(l: &DMatrix<f64>, y: &DVector<f64>, h: &SsHyperparams) -> Vec<f64> {
    exact_pips_stats(&RegressionStats::from_design(l, y).unwrap(), h)
}

/// [`exact_pips`] from `LᵀL`, `Lᵀy`, `yᵀy`.
pub fn exact_pips_stats(st: &RegressionStats, h: &SsHyperparams) -> Vec<f64> {
    let k = st.k();
    assert!(k <= 20, "enumeration is exponential in K");
    let a_n = h.a_sigma + 0.5 * st.n as f64;
    let mut log_w = Vec::with_capacity(1 << k);
    for mask in 0u32..(1 << k) {
        let s: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let size = s.len() as f64;
        let (log_det, fit) = if s.is_empty() {
            (0.0, 0.0)
        } else {
            let a = st.gram_submatrix(&s) + DMatrix::identity(s.len(), s.len()) / h.v_s;
            let chol = a.cholesky().expect("A_S is positive definite");
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let c = DVector::from_iterator(s.len(), s.iter().map(|&j| st.xty[j]));
            let mu = chol.solve(&c);
            (log_det, c.dot(&mu))
        };
        let b_n = h.b_sigma + 0.5 * (st.yty - fit);
        let log_lik = -0.5 * size * h.v_s.ln() - 0.5 * log_det - a_n * b_n.ln();
        let log_prior = size * h.p0.ln() + (k as f64 - size) * (1.0 - h.p0).ln();
        log_w.push(log_lik + log_prior);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    (0..k)
        .map(|j| {
            weights
                .iter()
                .enumerate()
                .filter(|(mask, _)| mask & (1 << j) != 0)
                .map(|(_, w)| w)
                .sum::<f64>()
                / total
        })
        .collect()
}

pub fn selected(pips: &[f64], threshold: f64) -> Vec<usize> {
    (0..pips.len()).filter(|&j| pips[j] > threshold).collect()
}

/// Ordinary least squares by QR; returns the weights.
pub fn ols(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = a.clone().qr();
    let qty = qr.q().tr_mul(y);
    qr.r().solve_upper_triangular(&qty).expect("full column rank")
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}
