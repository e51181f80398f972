//! Coordinate-ascent updates and the evidence lower bound.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::{RegressionStats, SsHyperparams, Sweep};
use crate::error::{Error, Result};

const W_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VbState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub a_q: f64,
    pub b_q: f64,
    pub tau: f64,
    pub w: DVector<f64>,
    pub elbo: f64,
    pub iter: usize,
    /// `ln|Σ|` of the current `sigma`.
    pub log_det_sigma: f64,
}

impl VbState {
    /// Starting point: inclusion probabilities `w0`, noise precision `tau_init`.
    /// Moments are filled in by the first iteration.
    pub fn initial(w0: &[f64], h: &SsHyperparams, n: usize) -> VbState {
        let k = w0.len();
        let a_q = h.a_sigma + 0.5 * n as f64 + 0.5 * k as f64;
        VbState {
            mu: DVector::zeros(k),
            sigma: DMatrix::identity(k, k),
            a_q,
            b_q: a_q / h.tau_init,
            tau: h.tau_init,
            w: DVector::from_iterator(k, w0.iter().map(|v| v.clamp(W_EPS, 1.0 - W_EPS))),
            elbo: f64::NEG_INFINITY,
            iter: 0,
            log_det_sigma: 0.0,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `A = G ⊙ Ω + I / v_s` with `Ω = w wᵀ + diag(w (1 - w))`.
fn a_matrix(stats: &RegressionStats, w: &DVector<f64>, v_s: f64) -> DMatrix<f64> {
    let k = w.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| stats.gram[(i, j)] * w[i] * w[j]);
    for i in 0..k {
        a[(i, i)] += stats.gram[(i, i)] * w[i] * (1.0 - w[i]) + 1.0 / v_s;
    }
    a
}

/// `b_σ + ½ E‖y - L(z⊙θ)‖² + ½ E[θᵀθ] / v_s` under the current factors.
fn b_value(
    stats: &RegressionStats,
    h: &SsHyperparams,
    w: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let u = w.component_mul(mu);
    let fit = (stats.yty - 2.0 * stats.xty.dot(&u) + u.dot(&(&stats.gram * &u))).max(0.0);
    let k = w.len();
    let mut rest = 0.0;
    for i in 0..k {
        rest += stats.gram[(i, i)] * w[i] * (1.0 - w[i]) * mu[i] * mu[i] + mu[i] * mu[i] / h.v_s;
    }
    let a = a_matrix(stats, w, h.v_s);
    let tr: f64 = a.iter().zip(sigma.iter()).map(|(x, y)| x * y).sum();
    h.b_sigma + 0.5 * (fit + rest + tr)
}

/// One sweep: `Σ`, `μ`, `a_q`, `b_q`, `τ`, then each `w_k` in ascending
/// order. The noise factor is refreshed once more after the `w` sweep so
/// that the returned ELBO is exact at the returned state.
pub fn vb_iteration(state: &VbState, stats: &RegressionStats, h: &SsHyperparams) -> Result<VbState> {
    let k = stats.k();
    let n = stats.n as f64;
    let iter = state.iter + 1;
    let a = a_matrix(stats, &state.w, h.v_s);
    let chol = a.clone().cholesky().ok_or_else(|| Error::Numerical {
        iter,
        what: "posterior precision is not positive definite".into(),
    })?;
    let log_det_a: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let a_inv = chol.inverse();
    let sigma = &a_inv / state.tau;
    let log_det_sigma = -(k as f64 * state.tau.ln() + log_det_a);
    let mu = &a_inv * state.w.component_mul(&stats.xty);

    let a_q = h.a_sigma + 0.5 * n + 0.5 * k as f64;
    let mut b_q = b_value(stats, h, &state.w, &mu, &sigma);
    if !(b_q > 0.0 && b_q.is_finite()) {
        return Err(Error::Numerical {
            iter,
            what: format!("noise rate b_q = {b_q} is not positive"),
        });
    }
    let mut tau = a_q / b_q;

    let prior_logit = logit(h.p0);
    let old_w = state.w.clone();
    let mut w = state.w.clone();
    for j in 0..k {
        let src = match h.sweep {
            Sweep::GaussSeidel => &w,
            Sweep::Jacobi => &old_w,
        };
        let mut cross = 0.0;
        for l in 0..k {
            if l != j {
                cross += stats.gram[(j, l)] * src[l] * (mu[l] * mu[j] + sigma[(l, j)]);
            }
        }
        let eta = prior_logit - 0.5 * tau * (mu[j] * mu[j] + sigma[(j, j)]) * stats.gram[(j, j)]
            + tau * (stats.xty[j] * mu[j] - cross);
        w[j] = expit(eta).clamp(W_EPS, 1.0 - W_EPS);
    }

    b_q = b_value(stats, h, &w, &mu, &sigma);
    if !(b_q > 0.0 && b_q.is_finite()) {
        return Err(Error::Numerical {
            iter,
            what: format!("noise rate b_q = {b_q} is not positive"),
        });
    }
    tau = a_q / b_q;

    let mut next = VbState {
        mu,
        sigma,
        a_q,
        b_q,
        tau,
        w,
        elbo: 0.0,
        iter,
        log_det_sigma,
    };
    next.elbo = compute_elbo(&next, h, stats.n, k)?;
    Ok(next)
}

/// `Σ_k w_k ln(p0/w_k) + (1-w_k) ln((1-p0)/(1-w_k))`, i.e. minus the KL
/// divergence of the inclusion factors from the prior.
pub fn bernoulli_term(w: &[f64], p0: f64) -> f64 {
    w.iter()
        .map(|&wk| {
            let w = wk.clamp(W_EPS, 1.0 - W_EPS);
            w * (p0 / w).ln() + (1.0 - w) * ((1.0 - p0) / (1.0 - w)).ln()
        })
        .sum()
}

/// Evidence lower bound of the reparameterised spike-and-slab model, valid
/// when `b_q` is the optimal noise rate for the other factors (as it is
/// after every [`vb_iteration`]).
pub fn compute_elbo(state: &VbState, h: &SsHyperparams, n: usize, k: usize) -> Result<f64> {
    if !state.log_det_sigma.is_finite() {
        return Err(Error::Numerical {
            iter: state.iter,
            what: "log-determinant of Σ is undefined".into(),
        });
    }
    let (n, kf) = (n as f64, k as f64);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let bern = bernoulli_term(state.w.as_slice(), h.p0);
    let elbo = 0.5 * kf - 0.5 * n * ln_2pi - 0.5 * kf * h.v_s.ln() + h.a_sigma * h.b_sigma.ln() - ln_gamma(h.a_sigma)
        + ln_gamma(state.a_q)
        - state.a_q * state.b_q.ln()
        + 0.5 * state.log_det_sigma
        + bern;
    if !elbo.is_finite() {
        return Err(Error::Numerical {
            iter: state.iter,
            what: "ELBO is not finite".into(),
        });
    }
    Ok(elbo)
}
