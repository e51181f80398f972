//! Sparse Bayesian discovery of Itô SDEs from trajectory ensembles, and
//! Monte Carlo first-passage reliability of the discovered models.

pub mod basis;
pub mod dictionary;
pub mod discovery;
pub mod ensemble;
pub mod error;
pub mod km;
pub mod model;
pub mod reliability;
pub mod simulate;
pub mod systems;
pub mod vb;

pub use basis::{evaluate_basis, BasisExpansion, BasisTerm};
pub use ensemble::{add_measurement_noise, add_measurement_noise_to, Ensemble, Trajectory};
pub use error::{Error, ErrorClass, Result};
pub use model::{DiffusionForm, SdeModel};
pub use reliability::{compare_curves, failure_probability, CurveComparison, FailureCurve, LimitState, McSettings};
pub use simulate::{euler_maruyama, simulate_ensemble, simulate_ensemble_with, Scheme};
pub use systems::{builtin_system, BuiltinSystem};
