//! Built-in ground-truth systems: shear chains of unit masses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, BasisTerm};
use crate::error::{Error, Result};
use crate::model::SdeModel;
use crate::simulate::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSystem {
    DuffingSdof,
    Cubic3dof,
    Tmd5dof,
}

impl BuiltinSystem {
    pub const ALL: [BuiltinSystem; 3] = [
        BuiltinSystem::DuffingSdof,
        BuiltinSystem::Cubic3dof,
        BuiltinSystem::Tmd5dof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinSystem::DuffingSdof => "duffing_sdof",
            BuiltinSystem::Cubic3dof => "cubic_3dof",
            BuiltinSystem::Tmd5dof => "tmd_5dof",
        }
    }

    /// Integration scheme the chain systems need at `dt = 1e-3`.
    pub fn recommended_scheme(self) -> Scheme {
        match self {
            BuiltinSystem::DuffingSdof => Scheme::Explicit,
            _ => Scheme::SemiImplicit,
        }
    }
}

impl fmt::Display for BuiltinSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinSystem::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

/// Ground-truth model and default initial state.
pub fn builtin_system(system: BuiltinSystem) -> (SdeModel, Vec<f64>) {
    let model = match system {
        BuiltinSystem::DuffingSdof => shear_chain("duffing_sdof", &[1000.0], &[2.0], &[1e5], &[1.0]),
        BuiltinSystem::Cubic3dof => {
            shear_chain("cubic_3dof", &[1000.0, 2000.0, 3000.0], &[2.0; 3], &[1e5; 3], &[1.0; 3])
        }
        BuiltinSystem::Tmd5dof => shear_chain(
            "tmd_5dof",
            &[1000.0, 1500.0, 2000.0, 2500.0, 3000.0, 300.0],
            &[2.0; 6],
            &[0.0; 6],
            &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
        ),
    }
    .expect("built-in parameters are valid");
    let x0 = match system {
        BuiltinSystem::Cubic3dof => vec![0.05, 0.0, 0.01, 0.0, 0.01, 0.0],
        _ => vec![0.0; model.dim()],
    };
    (model, x0)
}

/// Chain of unit masses fixed to the ground at one end. Spring `i` joins
/// mass `i-1` (or the ground) to mass `i`, with linear stiffness `k[i]`,
/// damping `c[i]` and cubic stiffness `alpha[i]`. The state is
/// `[x1, v1, x2, v2, ...]`; displacement rows are kinematic and velocity row
/// `i` has constant diffusion `sigma[i]`.
pub fn shear_chain(label: &str, k: &[f64], c: &[f64], alpha: &[f64], sigma: &[f64]) -> Result<SdeModel> {
    let n = k.len();
    if n == 0 || c.len() != n || alpha.len() != n || sigma.len() != n {
        return Err(Error::DimensionMismatch(
            "chain parameter vectors must share a non-zero length".into(),
        ));
    }
    let m = 2 * n;
    let disp = |i: usize| 2 * i;
    let vel = |i: usize| 2 * i + 1;
    let mut drift = Vec::with_capacity(m);
    let mut diffusion = Vec::with_capacity(m);
    for i in 0..n {
        drift.push(BasisExpansion::new(m, vec![(BasisTerm::linear(vel(i)), 1.0)])?);
        diffusion.push(BasisExpansion::zero(m));

        let mut acc = TermAccumulator::default();
        // (spring index, neighbour mass): the spring below and, if any, above.
        let mut springs = vec![(i, i.checked_sub(1))];
        if i + 1 < n {
            springs.push((i + 1, Some(i + 1)));
        }
        for (s, other) in springs {
            acc.add(BasisTerm::linear(disp(i)), -k[s]);
            acc.add(BasisTerm::linear(vel(i)), -c[s]);
            if let Some(o) = other {
                acc.add(BasisTerm::linear(disp(o)), k[s]);
                acc.add(BasisTerm::linear(vel(o)), c[s]);
            }
            if alpha[s] != 0.0 {
                // -alpha (x_i - x_o)^3
                let (a, b) = (disp(i), other.map(disp));
                acc.add(BasisTerm::monomial(vec![a, a, a])?, -alpha[s]);
                if let Some(b) = b {
                    acc.add(BasisTerm::monomial(vec![a, a, b])?, 3.0 * alpha[s]);
                    acc.add(BasisTerm::monomial(vec![a, b, b])?, -3.0 * alpha[s]);
                    acc.add(BasisTerm::monomial(vec![b, b, b])?, alpha[s]);
                }
            }
        }
        drift.push(BasisExpansion::new(m, acc.terms)?);
        diffusion.push(if sigma[i] != 0.0 {
            BasisExpansion::constant(m, sigma[i])
        } else {
            BasisExpansion::zero(m)
        });
    }
    let kinematic: Vec<usize> = (0..n).map(disp).collect();
    SdeModel::new(label, drift, diffusion)?.with_kinematic(&kinematic)
}

#[derive(Default)]
struct TermAccumulator {
    terms: Vec<(BasisTerm, f64)>,
}

impl TermAccumulator {
    fn add(&mut self, term: BasisTerm, w: f64) {
        match self.terms.iter_mut().find(|(t, _)| *t == term) {
            Some((_, v)) => *v += w,
            None => self.terms.push((term, w)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(idx: &[usize]) -> BasisTerm {
        BasisTerm::monomial(idx.to_vec()).unwrap()
    }

    #[test]
    fn duffing_coefficients() {
        let (m, x0) = builtin_system(BuiltinSystem::DuffingSdof);
        assert_eq!(m.dim(), 2);
        assert_eq!(x0, vec![0.0, 0.0]);
        let d = &m.drift()[1];
        assert_eq!(d.weight_of(&BasisTerm::linear(0)), -1000.0);
        assert_eq!(d.weight_of(&BasisTerm::linear(1)), -2.0);
        assert_eq!(d.weight_of(&mono(&[0, 0, 0])), -1e5);
        assert_eq!(d.terms().len(), 3);
        assert_eq!(m.diffusion()[1], BasisExpansion::constant(2, 1.0));
        assert_eq!(m.drift()[0].weight_of(&BasisTerm::linear(1)), 1.0);
        assert_eq!(m.kinematic_states(), vec![0]);
    }

    #[test]
    fn cubic_3dof_first_floor_row() {
        let (m, x0) = builtin_system(BuiltinSystem::Cubic3dof);
        assert_eq!(x0, vec![0.05, 0.0, 0.01, 0.0, 0.01, 0.0]);
        let d = &m.drift()[1];
        let support: Vec<BasisTerm> = d
            .terms()
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|(t, _)| t.clone())
            .collect();
        let expected = [
            BasisTerm::linear(0),
            BasisTerm::linear(1),
            BasisTerm::linear(2),
            BasisTerm::linear(3),
            mono(&[0, 0, 0]),
            mono(&[0, 0, 2]),
            mono(&[0, 2, 2]),
            mono(&[2, 2, 2]),
        ];
        assert_eq!(support.len(), expected.len());
        for t in &expected {
            assert!(support.contains(t), "missing {t}");
        }
        assert_eq!(d.weight_of(&BasisTerm::linear(0)), -3000.0);
        assert_eq!(d.weight_of(&BasisTerm::linear(2)), 2000.0);
        assert_eq!(d.weight_of(&mono(&[0, 0, 0])), -2e5);
        assert_eq!(d.weight_of(&mono(&[0, 0, 2])), 3e5);
    }

    #[test]
    fn chain_drift_matches_matrix_form() {
        // a_i = -(K x)_i - (C v)_i - cubic forces, evaluated at a random state.
        let (m, _) = builtin_system(BuiltinSystem::Cubic3dof);
        let s = [0.013, -0.2, -0.007, 0.4, 0.021, 0.1];
        let (x, v) = ([s[0], s[2], s[4]], [s[1], s[3], s[5]]);
        let k = [1000.0, 2000.0, 3000.0];
        let a = 1e5;
        let spring = |d: f64, kk: f64| kk * d + a * d.powi(3);
        let f = [
            -spring(x[0], k[0]) - spring(x[0] - x[1], k[1]) - 2.0 * v[0] - 2.0 * (v[0] - v[1]),
            -spring(x[1] - x[0], k[1]) - spring(x[1] - x[2], k[2]) - 2.0 * (v[1] - v[0]) - 2.0 * (v[1] - v[2]),
            -spring(x[2] - x[1], k[2]) - 2.0 * (v[2] - v[1]),
        ];
        for i in 0..3 {
            let got = m.drift_row(2 * i + 1, &s);
            assert!(
                (got - f[i]).abs() < 1e-9 * f[i].abs().max(1.0),
                "{i}: {got} vs {}",
                f[i]
            );
        }
    }

    #[test]
    fn tmd_row_has_no_noise() {
        let (m, x0) = builtin_system(BuiltinSystem::Tmd5dof);
        assert_eq!(m.dim(), 12);
        assert_eq!(x0.len(), 12);
        assert!(m.diffusion()[11].is_empty());
        assert_eq!(m.noisy_states(), vec![1, 3, 5, 7, 9]);
        let top = &m.drift()[9];
        assert_eq!(top.weight_of(&BasisTerm::linear(8)), -3300.0);
        assert_eq!(top.weight_of(&BasisTerm::linear(10)), 300.0);
        let tmd = &m.drift()[11];
        assert_eq!(tmd.weight_of(&BasisTerm::linear(10)), -300.0);
        assert_eq!(tmd.weight_of(&BasisTerm::linear(8)), 300.0);
    }

    #[test]
    fn names_parse() {
        for s in BuiltinSystem::ALL {
            assert_eq!(s.name().parse::<BuiltinSystem>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<BuiltinSystem>(), Err(Error::UnknownSystem(_))));
    }
}
