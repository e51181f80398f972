//! Candidate-function design matrices and their standardisation.
//!
//! Column order: the constant, monomials of total degree `1..=P` in graded
//! lexicographic order, then `sgn`, `abs`, `x|x|`, `sin`, `cos`, each family
//! component-major.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisTerm;
use crate::error::{Error, Result};
use crate::km::StateMatrix;
use crate::vb::RegressionStats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub poly_order: usize,
    pub signum: bool,
    pub abs: bool,
    pub x_abs_x: bool,
    pub sin: bool,
    pub cos: bool,
    /// Explicit column list (`"x1^2*x3"`, `"sgn(x2)"`, ...). Overrides the
    /// family switches; the constant is always prepended if missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            poly_order: 1,
            signum: false,
            abs: false,
            x_abs_x: false,
            sin: false,
            cos: false,
            columns: None,
        }
    }
}

impl DictionaryConfig {
    pub fn polynomial(poly_order: usize) -> Self {
        DictionaryConfig {
            poly_order,
            ..Default::default()
        }
    }

    fn extra_families(&self) -> usize {
        [self.signum, self.abs, self.x_abs_x, self.sin, self.cos]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_none() && self.poly_order == 0 && self.extra_families() == 0 {
            return Err(Error::invalid(
                "dictionary",
                "enable at least one family (poly_order >= 1 or an extra family)",
            ));
        }
        Ok(())
    }

    /// Ordered, duplicate-free column list over an `m`-dimensional state.
    pub fn columns(&self, m: usize) -> Result<Vec<BasisTerm>> {
        self.validate()?;
        if m == 0 {
            return Err(Error::invalid("dim", "state dimension must be positive"));
        }
        if let Some(names) = &self.columns {
            let mut cols = vec![BasisTerm::Constant];
            for name in names {
                let term: BasisTerm = name.parse()?;
                term.check_dim(m)?;
                if term == BasisTerm::Constant {
                    continue;
                }
                if cols.contains(&term) {
                    return Err(Error::invalid("columns", format!("duplicate column `{term}`")));
                }
                cols.push(term);
            }
            if cols.len() == 1 {
                return Err(Error::invalid(
                    "columns",
                    "explicit column list has no non-constant term",
                ));
            }
            return Ok(cols);
        }
        let mut cols = vec![BasisTerm::Constant];
        for degree in 1..=self.poly_order {
            for idx in multisets(m, degree) {
                cols.push(BasisTerm::Monomial(idx));
            }
        }
        let families: [(bool, fn(usize) -> BasisTerm); 5] = [
            (self.signum, BasisTerm::Signum),
            (self.abs, BasisTerm::Abs),
            (self.x_abs_x, BasisTerm::XAbsX),
            (self.sin, BasisTerm::Sin),
            (self.cos, BasisTerm::Cos),
        ];
        for (on, make) in families {
            if on {
                cols.extend((0..m).map(make));
            }
        }
        Ok(cols)
    }
}

/// Non-decreasing index lists of length `d` over `0..m`, in lexicographic order.
fn multisets(m: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; d];
    loop {
        out.push(cur.clone());
        // Rightmost position that can still be incremented.
        let Some(p) = (0..d).rev().find(|&p| cur[p] + 1 < m) else {
            return out;
        };
        let v = cur[p] + 1;
        for q in p..d {
            cur[q] = v;
        }
    }
}

/// `C(m + P, P) + m * extras`.
pub fn column_count(m: usize, poly_order: usize, extras: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=poly_order as u128 {
        c = c * (m as u128 + i) / i;
    }
    c as usize + m * extras
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub columns: Vec<BasisTerm>,
    pub matrix: DMatrix<f64>,
}

impl Dictionary {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(ToString::to_string).collect()
    }

    /// CSV of the design matrix with one header cell per column name.
    pub fn write_audit_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "{}", self.names().join(","))?;
            for r in 0..self.n() {
                let row: Vec<String> = self.matrix.row(r).iter().map(f64::to_string).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

pub fn build_dictionary(states: &StateMatrix, cfg: &DictionaryConfig) -> Result<Dictionary> {
    let columns = cfg.columns(states.dim())?;
    build_dictionary_from(states, columns)
}

pub fn build_dictionary_from(states: &StateMatrix, columns: Vec<BasisTerm>) -> Result<Dictionary> {
    let n = states.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData("no states to evaluate".into()));
    }
    for c in &columns {
        c.check_dim(states.dim())?;
    }
    let evaluated: Vec<Result<Vec<f64>>> = columns
        .par_iter()
        .map(|term| {
            let col: Vec<f64> = states.rows().map(|x| term.eval_unchecked(x)).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteColumn {
                    column: term.to_string(),
                });
            }
            Ok(col)
        })
        .collect();
    let cols = evaluated.into_iter().collect::<Result<Vec<_>>>()?;
    let matrix = DMatrix::from_fn(n, columns.len(), |r, k| cols[k][r]);
    Ok(Dictionary { columns, matrix })
}

/// Column and target moments removed by [`standardize`]. Vectors are over
/// the retained (non-constant) columns, listed in `retained`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub retained: Vec<usize>,
    pub mu_d: Vec<f64>,
    pub s_d: Vec<f64>,
    pub mu_y: f64,
    pub dropped_constant: Option<usize>,
}

fn check_scale(term: &BasisTerm, mean: f64, std: f64) -> Result<()> {
    if !(std > 0.0) || std <= 1e-12 * mean.abs() {
        return Err(Error::DegenerateColumn {
            column: term.to_string(),
        });
    }
    Ok(())
}

/// Drops the constant column, scales the others to mean 0 and population
/// std 1, and centres the target.
pub fn standardize(dict: &Dictionary, y: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>, StandardizationStats)> {
    let n = dict.n();
    if n < 2 {
        return Err(Error::InsufficientData("standardisation needs at least 2 rows".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "dictionary has {n} rows, target has {}",
            y.len()
        )));
    }
    let nf = n as f64;
    let dropped_constant = dict.columns.iter().position(|c| *c == BasisTerm::Constant);
    let retained: Vec<usize> = (0..dict.k()).filter(|k| Some(*k) != dropped_constant).collect();
    let mut out = DMatrix::zeros(n, retained.len());
    let mut mu_d = Vec::with_capacity(retained.len());
    let mut s_d = Vec::with_capacity(retained.len());
    for (j, &k) in retained.iter().enumerate() {
        let col = dict.matrix.column(k);
        let mean = col.sum() / nf;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
        check_scale(&dict.columns[k], mean, std)?;
        for r in 0..n {
            out[(r, j)] = (col[r] - mean) / std;
        }
        mu_d.push(mean);
        s_d.push(std);
    }
    let mu_y = y.iter().sum::<f64>() / nf;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - mu_y));
    let stats = StandardizationStats {
        retained,
        mu_d,
        s_d,
        mu_y,
        dropped_constant,
    };
    Ok((out, yc, stats))
}

/// Maps standardised weights back: `μ = μˢ / s`, `Σ = S⁻¹ Σˢ S⁻¹`,
/// `intercept = μ_Y - μ_D · μ`.
pub fn destandardize_weights(
    mu_s: &DVector<f64>,
    sigma_s: &DMatrix<f64>,
    stats: &StandardizationStats,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let k = stats.s_d.len();
    if mu_s.len() != k || sigma_s.nrows() != k || sigma_s.ncols() != k || stats.mu_d.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "standardised weights of length {} for {k} retained columns",
            mu_s.len()
        )));
    }
    let mu = DVector::from_fn(k, |i, _| mu_s[i] / stats.s_d[i]);
    let mut sigma = DMatrix::from_fn(k, k, |i, j| sigma_s[(i, j)] / (stats.s_d[i] * stats.s_d[j]));
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let intercept = stats.mu_y - stats.mu_d.iter().zip(mu.iter()).map(|(a, b)| a * b).sum::<f64>();
    Ok((mu, sigma, intercept))
}

const BLOCK_ROWS: usize = 4096;
const SUPER_BLOCK_ROWS: usize = 16 * BLOCK_ROWS;

/// Standardised Gram matrix of a dictionary over a state matrix, computed in
/// row blocks so the `N × K` design never exists in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignStats {
    pub columns: Vec<BasisTerm>,
    pub retained: Vec<usize>,
    pub dropped_constant: Option<usize>,
    pub mu_d: Vec<f64>,
    pub s_d: Vec<f64>,
    /// Gram matrix of the standardised retained columns (diagonal `N`).
    pub gram: DMatrix<f64>,
    pub n: usize,
}

fn block_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect()
}

/// Centred, unscaled retained columns for rows `lo..hi`.
fn centred_block(states: &StateMatrix, terms: &[&BasisTerm], mu: &[f64], lo: usize, hi: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(hi - lo, terms.len());
    for (r, i) in (lo..hi).enumerate() {
        let x = states.row(i);
        for (j, t) in terms.iter().enumerate() {
            b[(r, j)] = t.eval_unchecked(x) - mu[j];
        }
    }
    b
}

impl DesignStats {
    pub fn compute(states: &StateMatrix, columns: Vec<BasisTerm>) -> Result<Self> {
        let n = states.n_rows();
        if n < 2 {
            return Err(Error::InsufficientData("standardisation needs at least 2 rows".into()));
        }
        for c in &columns {
            c.check_dim(states.dim())?;
        }
        let dropped_constant = columns.iter().position(|c| *c == BasisTerm::Constant);
        let retained: Vec<usize> = (0..columns.len()).filter(|k| Some(*k) != dropped_constant).collect();
        let terms: Vec<&BasisTerm> = retained.iter().map(|&k| &columns[k]).collect();
        let kr = terms.len();
        if kr == 0 {
            return Err(Error::InsufficientData("dictionary has no non-constant column".into()));
        }

        let supers = block_ranges(n, SUPER_BLOCK_ROWS);
        let sums: Vec<Vec<f64>> = supers
            .par_iter()
            .map(|&(lo, hi)| {
                let mut s = vec![0.0; kr];
                for i in lo..hi {
                    let x = states.row(i);
                    for (j, t) in terms.iter().enumerate() {
                        s[j] += t.eval_unchecked(x);
                    }
                }
                s
            })
            .collect();
        let mut mu_d = vec![0.0; kr];
        for s in &sums {
            for j in 0..kr {
                mu_d[j] += s[j];
            }
        }
        for (j, m) in mu_d.iter_mut().enumerate() {
            if !m.is_finite() {
                return Err(Error::NonFiniteColumn {
                    column: terms[j].to_string(),
                });
            }
            *m /= n as f64;
        }

        let partials: Vec<DMatrix<f64>> = supers
            .par_iter()
            .map(|&(lo, hi)| {
                let mut g = DMatrix::zeros(kr, kr);
                for (a, b) in block_ranges(hi - lo, BLOCK_ROWS) {
                    let blk = centred_block(states, &terms, &mu_d, lo + a, lo + b);
                    g.gemm_tr(1.0, &blk, &blk, 1.0);
                }
                g
            })
            .collect();
        let mut gram = DMatrix::zeros(kr, kr);
        for p in &partials {
            gram += p;
        }
        let mut s_d = Vec::with_capacity(kr);
        for j in 0..kr {
            let std = (gram[(j, j)] / n as f64).sqrt();
            if !std.is_finite() {
                return Err(Error::NonFiniteColumn {
                    column: terms[j].to_string(),
                });
            }
            check_scale(terms[j], mu_d[j], std)?;
            s_d.push(std);
        }
        for i in 0..kr {
            for j in 0..kr {
                gram[(i, j)] /= s_d[i] * s_d[j];
            }
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(DesignStats {
            columns,
            retained,
            dropped_constant,
            mu_d,
            s_d,
            gram,
            n,
        })
    }

    pub fn retained_names(&self) -> Vec<String> {
        self.retained.iter().map(|&k| self.columns[k].to_string()).collect()
    }

    /// Regression statistics of target `y` (one entry per state row) against
    /// the standardised columns, plus the standardisation record.
    pub fn target_stats(&self, states: &StateMatrix, y: &[f64]) -> Result<(RegressionStats, StandardizationStats)> {
        if y.len() != self.n || states.n_rows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, target has {} and states {}",
                self.n,
                y.len(),
                states.n_rows()
            )));
        }
        let terms: Vec<&BasisTerm> = self.retained.iter().map(|&k| &self.columns[k]).collect();
        let kr = terms.len();
        let mu_y = y.iter().sum::<f64>() / self.n as f64;
        let partials: Vec<(DVector<f64>, f64)> = block_ranges(self.n, SUPER_BLOCK_ROWS)
            .par_iter()
            .map(|&(lo, hi)| {
                let mut c = DVector::zeros(kr);
                let mut yy = 0.0;
                for i in lo..hi {
                    let x = states.row(i);
                    let yc = y[i] - mu_y;
                    yy += yc * yc;
                    for (j, t) in terms.iter().enumerate() {
                        c[j] += (t.eval_unchecked(x) - self.mu_d[j]) * yc;
                    }
                }
                (c, yy)
            })
            .collect();
        let mut xty = DVector::zeros(kr);
        let mut yty = 0.0;
        for (c, yy) in &partials {
            xty += c;
            yty += yy;
        }
        for j in 0..kr {
            xty[j] /= self.s_d[j];
        }
        if !yty.is_finite() || xty.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteColumn {
                column: "target".into(),
            });
        }
        let stats = RegressionStats {
            gram: self.gram.clone(),
            xty,
            yty,
            n: self.n,
        };
        let std = StandardizationStats {
            retained: self.retained.clone(),
            mu_d: self.mu_d.clone(),
            s_d: self.s_d.clone(),
            mu_y,
            dropped_constant: self.dropped_constant,
        };
        Ok((stats, std))
    }
}
