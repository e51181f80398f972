//! Relevance-vector (type-II maximum likelihood) initialisation.

use nalgebra::{DMatrix, DVector};

use super::RegressionStats;

const MAX_ITERS: usize = 1000;
const PRUNE_ALPHA: f64 = 1e12;
const MAX_BETA: f64 = 1e12;
const TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SblResult {
    /// Relevance diagnostic `γ_k = 1 - α_k Σ_kk`, zero for pruned columns.
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// MacKay fixed-point evidence maximisation over per-weight precisions.
pub fn sbl(stats: &RegressionStats) -> SblResult {
    let k = stats.k();
    let n = stats.n as f64;
    let var_y = (stats.yty / n).max(f64::MIN_POSITIVE);
    let mut alpha = vec![1.0 / var_y; k];
    let mut beta = (10.0 / var_y).min(MAX_BETA);
    let mut gamma = vec![0.0; k];
    for it in 1..=MAX_ITERS {
        let active: Vec<usize> = (0..k).filter(|&j| alpha[j] < PRUNE_ALPHA).collect();
        if active.is_empty() {
            return SblResult {
                gamma: vec![0.0; k],
                alpha,
                beta,
                iterations: it,
                converged: true,
            };
        }
        let a = active.len();
        let mut prec = DMatrix::from_fn(a, a, |r, c| beta * stats.gram[(active[r], active[c])]);
        for (r, &j) in active.iter().enumerate() {
            prec[(r, r)] += alpha[j];
        }
        let Some(chol) = prec.cholesky() else {
            return SblResult {
                gamma,
                alpha,
                beta,
                iterations: it,
                converged: false,
            };
        };
        let sigma = chol.inverse();
        let c_a = DVector::from_iterator(a, active.iter().map(|&j| stats.xty[j]));
        let mu = &sigma * &c_a * beta;

        gamma.iter_mut().for_each(|g| *g = 0.0);
        let mut max_change: f64 = 0.0;
        for (r, &j) in active.iter().enumerate() {
            let g = (1.0 - alpha[j] * sigma[(r, r)]).clamp(0.0, 1.0);
            gamma[j] = g;
            let new_alpha = (g / (mu[r] * mu[r])).clamp(f64::MIN_POSITIVE, f64::INFINITY);
            let new_alpha = if new_alpha.is_finite() {
                new_alpha
            } else {
                PRUNE_ALPHA * 10.0
            };
            max_change = max_change.max((new_alpha.ln() - alpha[j].ln()).abs());
            alpha[j] = new_alpha;
        }
        let g_mu = stats.gram_submatrix(&active) * &mu;
        let rss = (stats.yty - 2.0 * mu.dot(&c_a) + mu.dot(&g_mu)).max(0.0);
        let dof = (n - gamma.iter().sum::<f64>()).max(0.0);
        let new_beta = if rss > 0.0 { (dof / rss).min(MAX_BETA) } else { MAX_BETA };
        max_change = max_change.max((new_beta.ln() - beta.ln()).abs());
        beta = new_beta.max(f64::MIN_POSITIVE);
        if max_change < TOL {
            for j in 0..k {
                if alpha[j] >= PRUNE_ALPHA {
                    gamma[j] = 0.0;
                }
            }
            return SblResult {
                gamma,
                alpha,
                beta,
                iterations: it,
                converged: true,
            };
        }
    }
    SblResult {
        gamma,
        alpha,
        beta,
        iterations: MAX_ITERS,
        converged: false,
    }
}

/// Initial inclusion probabilities from the SBL relevance diagnostic,
/// clamped to `[0.01, 0.99]`; pruned columns get 0.01. Returns `None` when
/// SBL does not converge.
pub fn sbl_initialize_stats(stats: &RegressionStats) -> Option<Vec<f64>> {
    let r = sbl(stats);
    if !r.converged {
        return None;
    }
    Some(r.gamma.iter().map(|g| g.clamp(0.01, 0.99)).collect())
}
