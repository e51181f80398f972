//! First-passage failure probability by Monte Carlo.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{child_seed, rng_for};
use crate::error::{Error, Result};
use crate::model::SdeModel;
use crate::simulate::{steps_for, Integrator, Scheme};

/// Failure when state `state_index` rises above `threshold`
/// (or when its magnitude does, with `absolute`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitState {
    pub state_index: usize,
    pub threshold: f64,
    #[serde(default)]
    pub absolute: bool,
}

impl LimitState {
    pub fn above(state_index: usize, threshold: f64) -> Self {
        LimitState {
            state_index,
            threshold,
            absolute: false,
        }
    }

    /// Signed margin: positive inside the failure domain.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let v = x[self.state_index];
        if self.absolute {
            v.abs() - self.threshold
        } else {
            v - self.threshold
        }
    }

    fn failed(&self, x: &[f64]) -> bool {
        self.margin(x) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub dt: f64,
    /// Horizon `T` in seconds.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Spacing of the reported grid, in seconds.
    pub report_stride: f64,
    pub scheme: Scheme,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            dt: 0.001,
            horizon: 30.0,
            n_paths: 2000,
            seed: 0,
            report_stride: 0.1,
            scheme: Scheme::Explicit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCurve {
    pub times: Vec<f64>,
    pub pf: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths that became non-finite; they count as failed from that step on.
    pub diverged: usize,
}

impl FailureCurve {
    fn from_crossings(
        times: Vec<f64>,
        stride_steps: usize,
        crossings: &[Option<usize>],
        seed: u64,
        diverged: usize,
    ) -> Self {
        let n = crossings.len();
        let mut counts = vec![0usize; times.len()];
        for c in crossings.iter().flatten() {
            let g = c.div_ceil(stride_steps);
            if g < counts.len() {
                counts[g] += 1;
            }
        }
        let mut pf = Vec::with_capacity(times.len());
        let mut acc = 0;
        for c in counts {
            acc += c;
            pf.push(acc as f64 / n as f64);
        }
        let ci_halfwidth = pf.iter().map(|p| 1.96 * (p * (1.0 - p) / n as f64).sqrt()).collect();
        FailureCurve {
            times,
            pf,
            ci_halfwidth,
            n_paths: n,
            seed,
            diverged,
        }
    }

    pub fn final_pf(&self) -> f64 {
        *self.pf.last().expect("curves have at least one point")
    }

    pub fn pf_at(&self, t: f64) -> Option<f64> {
        self.times.iter().position(|s| (s - t).abs() < 1e-9).map(|k| self.pf[k])
    }

    /// `t,pf,ci_lo,ci_hi`, the band clipped to `[0, 1]`.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let lines = self
            .times
            .iter()
            .zip(&self.pf)
            .zip(&self.ci_halfwidth)
            .map(|((t, p), h)| format!("{t},{p},{},{}", (p - h).max(0.0), (p + h).min(1.0)));
        crate::vb::write_lines(path, comment, "t,pf,ci_lo,ci_hi", lines)
    }
}

/// Step index at which a path first enters the failure domain, and whether it
/// got there by diverging.
fn first_passage(
    model: &SdeModel,
    x0: &[f64],
    ls: &LimitState,
    n_steps: usize,
    settings: &McSettings,
    seed: u64,
) -> Result<Option<(usize, bool)>> {
    if ls.failed(x0) {
        return Ok(Some((0, false)));
    }
    let mut integ = Integrator::new(model, settings.dt, settings.scheme)?;
    let mut rng = rng_for(seed);
    let mut x = x0.to_vec();
    for k in 1..=n_steps {
        if !integ.step(&mut x, &mut rng) {
            return Ok(Some((k, true)));
        }
        if ls.failed(&x) {
            return Ok(Some((k, false)));
        }
    }
    Ok(None)
}

/// `pf(t)`: share of paths whose limit state has been exceeded at least once
/// in `[0, t]`, on a grid `0, stride, ..., T`. Path `j` uses `child_seed(seed, j)`.
pub fn failure_probability(
    model: &SdeModel,
    x0: &[f64],
    ls: &LimitState,
    settings: &McSettings,
) -> Result<FailureCurve> {
    let m = model.dim();
    if x0.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, model has {m} states",
            x0.len()
        )));
    }
    if ls.state_index >= m {
        return Err(Error::invalid(
            "state_index",
            format!("state {} does not exist in a {m}-state model", ls.state_index),
        ));
    }
    if ls.threshold.is_nan() {
        return Err(Error::invalid("threshold", "must be a number"));
    }
    if settings.n_paths < 100 {
        return Err(Error::invalid("n_paths", "at least 100 paths are needed"));
    }
    let n_steps = steps_for(settings.horizon, settings.dt)?;
    let stride_steps = steps_for(settings.report_stride, settings.dt)
        .map_err(|_| Error::invalid("report_stride", "must be a positive whole number of steps"))?;
    if n_steps % stride_steps != 0 {
        return Err(Error::invalid("report_stride", "must divide the horizon"));
    }
    let n_grid = n_steps / stride_steps + 1;
    let times: Vec<f64> = (0..n_grid).map(|g| (g * stride_steps) as f64 * settings.dt).collect();

    let results: Vec<Result<Option<(usize, bool)>>> = (0..settings.n_paths)
        .into_par_iter()
        .map(|j| first_passage(model, x0, ls, n_steps, settings, child_seed(settings.seed, j as u64)))
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let diverged = results.iter().flatten().filter(|(_, d)| *d).count();
    let crossings: Vec<Option<usize>> = results.iter().map(|r| r.map(|(k, _)| k)).collect();
    Ok(FailureCurve::from_crossings(
        times,
        stride_steps,
        &crossings,
        settings.seed,
        diverged,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub sup_diff: f64,
    pub mean_abs_diff: f64,
}

pub fn compare_curves(a: &FailureCurve, b: &FailureCurve) -> Result<CurveComparison> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(s, t)| (s - t).abs() > 1e-9) {
        return Err(Error::GridMismatch);
    }
    let diffs: Vec<f64> = a.pf.iter().zip(&b.pf).map(|(p, q)| (p - q).abs()).collect();
    Ok(CurveComparison {
        sup_diff: diffs.iter().copied().fold(0.0, f64::max),
        mean_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
    })
}
