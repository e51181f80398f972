//! Euler-Maruyama integration of [`SdeModel`]s.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{child_seed, rng_for, Ensemble, Trajectory};
use crate::error::{Error, Result};
use crate::model::SdeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `X += f(X) dt + g(X) sqrt(dt) xi` for every state at once.
    #[default]
    Explicit,
    /// Non-kinematic states take the explicit step; kinematic states are then
    /// advanced with the drift evaluated at the updated state (symplectic
    /// Euler for second-order systems). Stable for stiff chain models at
    /// step sizes where the explicit scheme blows up.
    SemiImplicit,
}

/// Single-path stepper with preallocated buffers.
pub struct Integrator<'a> {
    model: &'a SdeModel,
    scheme: Scheme,
    dt: f64,
    sqrt_dt: f64,
    noisy: Vec<usize>,
    free: Vec<usize>,
    kinematic: Vec<usize>,
    z: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a SdeModel, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        let m = model.dim();
        let kinematic = model.kinematic_states();
        let free = (0..m).filter(|&i| !model.is_kinematic(i)).collect();
        Ok(Integrator {
            model,
            scheme,
            dt,
            sqrt_dt: dt.sqrt(),
            noisy: model.noisy_states(),
            free,
            kinematic,
            z: vec![0.0; m],
            next: vec![0.0; m],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `x` by one step. Returns `false` when the new state is not finite.
    ///
    /// Normals are drawn only for states with non-zero diffusion, in index
    /// order, so two models with the same noisy states consume the generator
    /// identically.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, x: &mut [f64], rng: &mut R) -> bool {
        for &i in &self.noisy {
            self.z[i] = rng.sample(StandardNormal);
        }
        let (dt, sq) = (self.dt, self.sqrt_dt);
        match self.scheme {
            Scheme::Explicit => {
                for i in 0..x.len() {
                    self.next[i] = x[i] + self.model.drift_row(i, x) * dt;
                }
                for &i in &self.noisy {
                    self.next[i] += self.model.diffusion_row(i, x) * sq * self.z[i];
                }
                x.copy_from_slice(&self.next);
            }
            Scheme::SemiImplicit => {
                for &i in &self.free {
                    self.next[i] = x[i] + self.model.drift_row(i, x) * dt;
                }
                for &i in &self.noisy {
                    self.next[i] += self.model.diffusion_row(i, x) * sq * self.z[i];
                }
                for &i in &self.free {
                    x[i] = self.next[i];
                }
                for &i in &self.kinematic {
                    self.next[i] = x[i] + self.model.drift_row(i, x) * dt;
                }
                for &i in &self.kinematic {
                    x[i] = self.next[i];
                }
            }
        }
        x.iter().all(|v| v.is_finite())
    }
}

fn check_start(model: &SdeModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, model has {} states",
            x0.len(),
            model.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x0", "initial state must be finite"));
    }
    for i in 0..model.dim() {
        if !model.drift_row(i, x0).is_finite() || !model.diffusion_row(i, x0).is_finite() {
            return Err(Error::invalid(
                "x0",
                format!("model is not finite at x0 (state x{})", i + 1),
            ));
        }
    }
    Ok(())
}

/// Number of steps covering `horizon` at step `dt`; the ratio must be whole.
pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive and finite"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be positive and finite"));
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 * n.max(1.0) || n < 1.0 {
        return Err(Error::invalid(
            "horizon",
            format!("horizon {horizon} is not a whole number of steps of dt {dt}"),
        ));
    }
    Ok(n as usize)
}

/// Integrates one path with `scheme`, reporting divergence as path `path`.
pub fn simulate_path(
    model: &SdeModel,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    seed: u64,
    scheme: Scheme,
    path: usize,
) -> Result<Trajectory> {
    if n_steps < 1 {
        return Err(Error::invalid("n_steps", "must be at least 1"));
    }
    check_start(model, x0)?;
    let m = model.dim();
    let mut integ = Integrator::new(model, dt, scheme)?;
    let mut rng = rng_for(seed);
    let mut data = Vec::with_capacity((n_steps + 1) * m);
    let mut x = x0.to_vec();
    data.extend_from_slice(&x);
    for k in 1..=n_steps {
        if !integ.step(&mut x, &mut rng) {
            return Err(Error::Divergence { path, step: k });
        }
        data.extend_from_slice(&x);
    }
    Trajectory::new(dt, 0.0, m, data)
}

/// Explicit Euler-Maruyama path of `n_steps` steps (`n_steps + 1` rows).
pub fn euler_maruyama(model: &SdeModel, x0: &[f64], dt: f64, n_steps: usize, seed: u64) -> Result<Trajectory> {
    simulate_path(model, x0, dt, n_steps, seed, Scheme::Explicit, 0)
}

/// `n_paths` explicit Euler-Maruyama paths; path `j` is seeded with `child_seed(seed, j)`.
pub fn simulate_ensemble(
    model: &SdeModel,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    simulate_ensemble_with(model, x0, dt, horizon, n_paths, seed, Scheme::Explicit)
}

pub fn simulate_ensemble_with(
    model: &SdeModel,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be at least 1"));
    }
    let n_steps = steps_for(horizon, dt)?;
    check_start(model, x0)?;
    let results: Vec<Result<Trajectory>> = (0..n_paths)
        .into_par_iter()
        .map(|j| simulate_path(model, x0, dt, n_steps, child_seed(seed, j as u64), scheme, j))
        .collect();
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ensemble::new(trajectories, seed)
}
