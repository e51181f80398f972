//! Spike-and-slab sparse Bayesian linear regression by variational Bayes.
//!
//! Model (weights reparameterised as `z ⊙ θ`):
//! `y | θ, z, σ² ~ N(L (z ⊙ θ), σ² I)`, `θ_k | σ² ~ N(0, σ² v_s)`,
//! `z_k ~ Bernoulli(p0)`, `σ² ~ InvGamma(a_σ, b_σ)`.
//! All updates need only `LᵀL`, `Lᵀy`, `yᵀy` and `N`, so the design matrix
//! itself never has to be held in memory.

mod cavi;
mod sbl;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cavi::{bernoulli_term, compute_elbo, logit, vb_iteration, VbState};
pub use sbl::{sbl, sbl_initialize_stats, SblResult};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Each `w_k` update sees the values already updated in the same sweep.
    #[default]
    GaussSeidel,
    /// Every `w_k` update uses the previous sweep's values.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsHyperparams {
    pub v_s: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub p0: f64,
    pub rho: f64,
    pub tau_init: f64,
    pub pip_threshold: f64,
    pub max_iters: usize,
    pub sweep: Sweep,
}

impl Default for SsHyperparams {
    fn default() -> Self {
        SsHyperparams {
            v_s: 10.0,
            a_sigma: 1e-4,
            b_sigma: 1e-4,
            p0: 0.1,
            rho: 1e-6,
            tau_init: 1000.0,
            pip_threshold: 0.5,
            max_iters: 500,
            sweep: Sweep::GaussSeidel,
        }
    }
}

impl SsHyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let unit = |v: f64| v > 0.0 && v < 1.0;
        let checks = [
            ("v_s", pos(self.v_s), "must be > 0"),
            ("a_sigma", pos(self.a_sigma), "must be > 0"),
            ("b_sigma", pos(self.b_sigma), "must be > 0"),
            ("p0", unit(self.p0), "must lie in (0, 1)"),
            ("rho", pos(self.rho), "must be > 0"),
            ("tau_init", pos(self.tau_init), "must be > 0"),
            ("pip_threshold", unit(self.pip_threshold), "must lie in (0, 1)"),
            ("max_iters", self.max_iters >= 1, "must be at least 1"),
        ];
        for (field, ok, why) in checks {
            if !ok {
                return Err(Error::invalid(field, why));
            }
        }
        Ok(())
    }
}

/// Sufficient statistics of a (standardised, centred) regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionStats {
    /// `LᵀL`, `K × K`.
    pub gram: DMatrix<f64>,
    /// `Lᵀy`.
    pub xty: DVector<f64>,
    /// `yᵀy`.
    pub yty: f64,
    pub n: usize,
}

impl RegressionStats {
    pub fn from_design(l: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if l.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, target has {}",
                l.nrows(),
                y.len()
            )));
        }
        Ok(RegressionStats {
            gram: l.tr_mul(l),
            xty: l.tr_mul(y),
            yty: y.dot(y),
            n: y.len(),
        })
    }

    pub fn k(&self) -> usize {
        self.xty.len()
    }

    pub fn gram_submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.gram[(idx[r], idx[c])])
    }

    /// Same problem with the target multiplied by `c`.
    pub fn scale_target(&self, c: f64) -> Self {
        RegressionStats {
            gram: self.gram.clone(),
            xty: &self.xty * c,
            yty: self.yty * c * c,
            n: self.n,
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.gram.nrows() != k || self.gram.ncols() != k {
            return Err(Error::DimensionMismatch("Gram matrix is not K x K".into()));
        }
        if self.n < 2 {
            return Err(Error::InsufficientData("regression needs at least 2 rows".into()));
        }
        if k == 0 {
            return Err(Error::InsufficientData("regression has no candidate columns".into()));
        }
        if self.gram.iter().chain(self.xty.iter()).any(|v| !v.is_finite()) || !self.yty.is_finite() {
            return Err(Error::NonFiniteColumn {
                column: "regression statistics".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub pip: Vec<f64>,
    pub selected: Vec<usize>,
    pub mu_theta: DVector<f64>,
    pub sigma_theta: DMatrix<f64>,
    pub a_star: f64,
    pub b_star: f64,
    /// Constant term; zero in standardised space.
    pub intercept: f64,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// SBL did not converge and `w` started from `p0`.
    pub sbl_fallback: bool,
}

impl PosteriorSummary {
    pub fn k(&self) -> usize {
        self.pip.len()
    }

    pub fn noise_variance(&self) -> f64 {
        self.b_star / self.a_star
    }

    pub fn weight_std(&self, k: usize) -> f64 {
        self.sigma_theta[(k, k)].max(0.0).sqrt()
    }

    pub fn write_pip_csv(&self, path: &Path, names: &[String], comment: Option<&str>) -> Result<()> {
        if names.len() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                self.k()
            )));
        }
        let rows = names.iter().enumerate().map(|(k, name)| {
            let sel = self.selected.contains(&k);
            (name.as_str(), self.pip[k], self.mu_theta[k], self.weight_std(k), sel)
        });
        write_pip_rows(path, comment, rows)
    }

    pub fn write_elbo_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        write_lines(
            path,
            comment,
            "iter,elbo",
            self.elbo_trace
                .iter()
                .enumerate()
                .map(|(i, e)| format!("{},{e}", i + 1)),
        )
    }
}

pub(crate) fn write_pip_rows<'a>(
    path: &Path,
    comment: Option<&str>,
    rows: impl Iterator<Item = (&'a str, f64, f64, f64, bool)>,
) -> Result<()> {
    let lines = rows.map(|(name, pip, mean, std, sel)| format!("{name},{pip},{mean},{std},{sel}"));
    write_lines(path, comment, "column_name,pip,weight_mean,weight_std,selected", lines)
}

pub(crate) fn write_lines(
    path: &Path,
    comment: Option<&str>,
    header: &str,
    lines: impl Iterator<Item = String>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{header}")?;
        for line in lines {
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// SBL initialisation on an explicit design. Returns the clamped relevance
/// diagnostic, or uniform `p0` and `true` when SBL fails to converge.
pub fn sbl_initialize(l: &DMatrix<f64>, y: &DVector<f64>, p0: f64) -> Result<(Vec<f64>, bool)> {
    let stats = RegressionStats::from_design(l, y)?;
    Ok(initial_w(&stats, p0))
}

fn initial_w(stats: &RegressionStats, p0: f64) -> (Vec<f64>, bool) {
    match sbl_initialize_stats(stats) {
        Some(w) => (w, false),
        None => (vec![p0; stats.k()], true),
    }
}

fn ascend(stats: &RegressionStats, h: &SsHyperparams, w0: &[f64]) -> Result<(VbState, Vec<f64>, bool)> {
    let mut state = VbState::initial(w0, h, stats.n);
    let mut trace = Vec::new();
    while state.iter < h.max_iters {
        let next = vb_iteration(&state, stats, h)?;
        let gain = next.elbo - state.elbo;
        trace.push(next.elbo);
        state = next;
        if gain < h.rho {
            return Ok((state, trace, true));
        }
    }
    Ok((state, trace, false))
}

/// Full inference on an explicit standardised design and centred target.
pub fn run_vb(l: &DMatrix<f64>, y: &DVector<f64>, h: &SsHyperparams) -> Result<PosteriorSummary> {
    let n = l.nrows() as f64;
    for (j, col) in l.column_iter().enumerate() {
        let mean = col.sum() / n;
        if mean.abs() > 1e-8 {
            return Err(Error::invalid(
                "design",
                format!("column {j} has mean {mean:e}; standardise before regression"),
            ));
        }
    }
    let ybar = y.sum() / n;
    if ybar.abs() > 1e-8 * (1.0 + y.amax()) {
        return Err(Error::invalid(
            "target",
            format!("target has mean {ybar:e}; centre it first"),
        ));
    }
    run_vb_stats(&RegressionStats::from_design(l, y)?, h)
}

/// Full inference from sufficient statistics: SBL start, coordinate ascent
/// until the ELBO gain drops below `rho`, then the support posterior.
pub fn run_vb_stats(stats: &RegressionStats, h: &SsHyperparams) -> Result<PosteriorSummary> {
    h.validate()?;
    stats.validate()?;
    let (w0, sbl_fallback) = initial_w(stats, h.p0);
    let (state, trace, converged) = ascend(stats, h, &w0)?;
    let mut summary = support_posterior(stats, h, state.w.as_slice())?;
    summary.elbo_trace = trace;
    summary.converged = converged;
    summary.iterations = state.iter;
    summary.sbl_fallback = sbl_fallback;
    Ok(summary)
}

/// Posterior of the weights with the support fixed at `{k : pip_k > threshold}`:
/// `θ_S ~ N(A⁻¹ c_S, (b*/a*) A⁻¹)` with `A = G_SS + I / v_s`.
fn support_posterior(stats: &RegressionStats, h: &SsHyperparams, pip: &[f64]) -> Result<PosteriorSummary> {
    let k = stats.k();
    let selected: Vec<usize> = (0..k).filter(|&j| pip[j] > h.pip_threshold).collect();
    let s = selected.len();
    let mut mu_theta = DVector::zeros(k);
    let mut sigma_theta = DMatrix::zeros(k, k);
    let a_star = h.a_sigma + 0.5 * stats.n as f64 + 0.5 * s as f64;
    let mut b_star = h.b_sigma + 0.5 * stats.yty;
    if s > 0 {
        let mut a = stats.gram_submatrix(&selected);
        for i in 0..s {
            a[(i, i)] += 1.0 / h.v_s;
        }
        let chol = a.cholesky().ok_or_else(|| Error::Numerical {
            iter: 0,
            what: "support posterior precision is not positive definite".into(),
        })?;
        let c_s = DVector::from_iterator(s, selected.iter().map(|&j| stats.xty[j]));
        let mu_s = chol.solve(&c_s);
        b_star = h.b_sigma + 0.5 * (stats.yty - c_s.dot(&mu_s)).max(0.0);
        let cov = chol.inverse() * (b_star / a_star);
        for (r, &i) in selected.iter().enumerate() {
            mu_theta[i] = mu_s[r];
            for (c, &j) in selected.iter().enumerate() {
                sigma_theta[(i, j)] = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            }
        }
    }
    Ok(PosteriorSummary {
        pip: pip.to_vec(),
        selected,
        mu_theta,
        sigma_theta,
        a_star,
        b_star,
        intercept: 0.0,
        elbo_trace: Vec::new(),
        converged: false,
        iterations: 0,
        sbl_fallback: false,
    })
}

/// Predictive mean `L* μ̂ + intercept` and covariance `L* Σ̂ L*ᵀ + (b*/a*) I`.
pub fn predict(l_star: &DMatrix<f64>, post: &PosteriorSummary) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if l_star.ncols() != post.k() {
        return Err(Error::DimensionMismatch(format!(
            "prediction design has {} columns, posterior has {}",
            l_star.ncols(),
            post.k()
        )));
    }
    let mean = l_star * &post.mu_theta + DVector::repeat(l_star.nrows(), post.intercept);
    let mut cov = l_star * &post.sigma_theta * l_star.transpose();
    let noise = post.noise_variance();
    for i in 0..cov.nrows() {
        cov[(i, i)] += noise;
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

#[cfg(test)]
mod tests;
