//! Per-sample Kramers-Moyal regression targets.
//!
//! Every consecutive pair of samples in every path gives one regression row:
//! `ΔX_i / dt` for drift and `ΔX_i ΔX_j / dt` for diffusion. Rows are stacked
//! path-major, time-minor; the last sample of each path has no forward
//! difference and contributes no row.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::BasisExpansion;
use crate::ensemble::{Ensemble, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    Drift(usize),
    Diffusion(usize, usize),
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Drift(i) => write!(f, "drift[x{}]", i + 1),
            TargetKind::Diffusion(i, j) => write!(f, "diffusion[x{},x{}]", i + 1, j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub y: Vec<f64>,
    pub kind: TargetKind,
    steps_per_path: usize,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_paths(&self) -> usize {
        self.y.len() / self.steps_per_path
    }

    /// `(path, step)` that produced row `r`.
    pub fn row_index(&self, r: usize) -> (usize, usize) {
        (r / self.steps_per_path, r % self.steps_per_path)
    }

    pub fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "path,step,y")?;
            for (r, y) in self.y.iter().enumerate() {
                let (p, s) = self.row_index(r);
                writeln!(w, "{p},{s},{y}")?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

fn check_state(ens: &Ensemble, i: usize) -> Result<()> {
    if i >= ens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state {i} requested from a {}-dimensional ensemble",
            ens.dim()
        )));
    }
    Ok(())
}

fn build(ens: &Ensemble, kind: TargetKind, mut row: impl FnMut(&[f64], &[f64]) -> f64) -> Result<TargetSet> {
    let steps = ens.n_rows() - 1;
    let mut y = Vec::with_capacity(ens.n_paths() * steps);
    for t in ens.trajectories() {
        for k in 0..steps {
            y.push(row(t.row(k), t.row(k + 1)));
        }
    }
    if let Some(r) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteColumn {
            column: format!("{kind} target row {r}"),
        });
    }
    Ok(TargetSet {
        y,
        kind,
        steps_per_path: steps,
    })
}

/// `Y(k) = (X_i(k+1) - X_i(k)) / dt`.
pub fn drift_targets(ens: &Ensemble, i: usize) -> Result<TargetSet> {
    check_state(ens, i)?;
    let dt = ens.dt();
    build(ens, TargetKind::Drift(i), |a, b| (b[i] - a[i]) / dt)
}

/// `Y(k) = ΔX_i ΔX_j / dt`, whose mean is `(g g^T)_ij`.
pub fn diffusion_targets(ens: &Ensemble, i: usize, j: usize) -> Result<TargetSet> {
    diffusion_targets_with(ens, i, j, &DiffusionTargetOptions::default())
}

#[derive(Debug, Clone, Default)]
pub struct DiffusionTargetOptions<'a> {
    /// Multiply by ½ (the other common normalisation of the second moment).
    pub half_factor: bool,
    /// Drift estimates for states `i` and `j`. When given, increments are
    /// taken about the predicted drift step, `ΔX - f(X) dt`, which removes
    /// the `f² dt` bias of the raw second moment.
    pub drift: Option<(&'a BasisExpansion, &'a BasisExpansion)>,
}

pub fn diffusion_targets_with(
    ens: &Ensemble,
    i: usize,
    j: usize,
    opts: &DiffusionTargetOptions<'_>,
) -> Result<TargetSet> {
    check_state(ens, i)?;
    check_state(ens, j)?;
    let dt = ens.dt();
    let scale = if opts.half_factor { 0.5 / dt } else { 1.0 / dt };
    let kind = TargetKind::Diffusion(i, j);
    match opts.drift {
        None => build(ens, kind, |a, b| (b[i] - a[i]) * (b[j] - a[j]) * scale),
        Some((fi, fj)) => {
            if fi.dim() != ens.dim() || fj.dim() != ens.dim() {
                return Err(Error::DimensionMismatch(
                    "drift correction has the wrong state dimension".into(),
                ));
            }
            build(ens, kind, |a, b| {
                let di = b[i] - a[i] - fi.eval(a) * dt;
                let dj = b[j] - a[j] - fj.eval(a) * dt;
                di * dj * scale
            })
        }
    }
}

/// States at which the targets are observed: every sample but the last of
/// each path, stacked in target-row order.
pub fn regression_states(ens: &Ensemble) -> StateMatrix {
    let m = ens.dim();
    let steps = ens.n_rows() - 1;
    let mut data = Vec::with_capacity(ens.n_paths() * steps * m);
    for t in ens.trajectories() {
        data.extend_from_slice(&t.data()[..steps * m]);
    }
    StateMatrix { dim: m, data }
}

/// Row-major `N × m` matrix of states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(StateMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        StateMatrix::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
}

impl From<&Trajectory> for StateMatrix {
    fn from(t: &Trajectory) -> Self {
        StateMatrix {
            dim: t.dim(),
            data: t.data().to_vec(),
        }
    }
}

/// Derivative of a sampled displacement: central differences inside,
/// second-order one-sided differences at both ends.
pub fn velocity_from_displacement(x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "velocity reconstruction needs at least 3 samples, got {n}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let h2 = 2.0 * dt;
    let mut v = Vec::with_capacity(n);
    v.push((-3.0 * x[0] + 4.0 * x[1] - x[2]) / h2);
    for k in 1..n - 1 {
        v.push((x[k + 1] - x[k - 1]) / h2);
    }
    v.push((3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / h2);
    Ok(v)
}
