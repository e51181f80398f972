//! Per-equation sparse regression of drift and diffusion, and assembly of
//! the discovered model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, BasisTerm};
use crate::dictionary::{destandardize_weights, DesignStats, DictionaryConfig};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::km::{
    diffusion_targets_with, drift_targets, regression_states, DiffusionTargetOptions, StateMatrix, TargetKind,
    TargetSet,
};
use crate::model::{DiffusionForm, ModelFile, SdeModel};
use crate::vb::{run_vb_stats, PosteriorSummary, SsHyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionTargetKind {
    /// `ΔX_i ΔX_j / dt`.
    Raw,
    /// Increments taken about the discovered drift step, `ΔX - f̂(X) dt`.
    #[default]
    DriftCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub dictionary: DictionaryConfig,
    /// Dictionary for the diffusion regressions; defaults to `dictionary`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_dictionary: Option<DictionaryConfig>,
    pub hyper: SsHyperparams,
    pub drift_states: Vec<usize>,
    pub diffusion_states: Vec<usize>,
    /// `(displacement, velocity)`: the displacement's drift is the velocity.
    pub kinematic_pairs: Vec<(usize, usize)>,
    pub diffusion_targets: DiffusionTargetKind,
    pub half_factor: bool,
    /// Replace each paired velocity by the derivative of its displacement
    /// before regressing.
    pub derive_velocities: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            dictionary: DictionaryConfig::default(),
            diffusion_dictionary: None,
            hyper: SsHyperparams::default(),
            drift_states: Vec::new(),
            diffusion_states: Vec::new(),
            kinematic_pairs: Vec::new(),
            diffusion_targets: DiffusionTargetKind::DriftCorrected,
            half_factor: false,
            derive_velocities: false,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        self.hyper.validate()?;
        self.dictionary.validate()?;
        if let Some(d) = &self.diffusion_dictionary {
            d.validate()?;
        }
        let in_range = |field: &str, i: usize| {
            if i >= m {
                Err(Error::invalid(
                    field,
                    format!("state {i} out of range for dimension {m}"),
                ))
            } else {
                Ok(())
            }
        };
        for &i in &self.drift_states {
            in_range("drift_states", i)?;
        }
        for &i in &self.diffusion_states {
            in_range("diffusion_states", i)?;
        }
        for &(d, v) in &self.kinematic_pairs {
            in_range("kinematic_pairs", d)?;
            in_range("kinematic_pairs", v)?;
            if self.drift_states.contains(&d) {
                return Err(Error::invalid(
                    "kinematic_pairs",
                    format!("state {d} is both kinematic and in drift_states"),
                ));
            }
            if self.diffusion_states.contains(&d) {
                return Err(Error::invalid(
                    "kinematic_pairs",
                    format!("kinematic state {d} cannot carry diffusion"),
                ));
            }
        }
        Ok(())
    }

    fn diffusion_dict(&self) -> &DictionaryConfig {
        self.diffusion_dictionary.as_ref().unwrap_or(&self.dictionary)
    }
}

/// One regression's outcome, in the original (unstandardised) units.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationPosterior {
    pub kind: TargetKind,
    /// Names of the regressed (non-constant) columns.
    pub column_names: Vec<String>,
    pub columns: Vec<BasisTerm>,
    /// Weights, covariance and intercept destandardised.
    pub posterior: PosteriorSummary,
    /// Diffusion only: training states where the fitted variance was negative.
    pub negative_clipped: Option<usize>,
    /// Diffusion only: `|intercept| / mean |fitted variance|` on the training states.
    pub constant_share: Option<f64>,
}

impl EquationPosterior {
    pub fn label(&self) -> String {
        self.kind.to_string()
    }

    /// Names of the selected columns.
    pub fn selected_names(&self) -> Vec<&str> {
        self.posterior
            .selected
            .iter()
            .map(|&k| self.column_names[k].as_str())
            .collect()
    }

    pub fn pip_of(&self, name: &str) -> Option<f64> {
        self.column_names
            .iter()
            .position(|n| n == name)
            .map(|k| self.posterior.pip[k])
    }

    pub fn weight_of(&self, name: &str) -> Option<f64> {
        self.column_names
            .iter()
            .position(|n| n == name)
            .map(|k| self.posterior.mu_theta[k])
    }

    /// Selected terms with their weights, plus the intercept as a constant.
    pub fn expansion(&self, dim: usize) -> Result<BasisExpansion> {
        let mut terms = vec![(BasisTerm::Constant, self.posterior.intercept)];
        for &k in &self.posterior.selected {
            terms.push((self.columns[k].clone(), self.posterior.mu_theta[k]));
        }
        BasisExpansion::new(dim, terms)
    }

    pub fn write_pip_csv(&self, path: &std::path::Path, comment: Option<&str>) -> Result<()> {
        let p = &self.posterior;
        let intercept = std::iter::once(("1", 1.0, p.intercept, 0.0, true));
        let rows = self.column_names.iter().enumerate().map(|(k, n)| {
            (
                n.as_str(),
                p.pip[k],
                p.mu_theta[k],
                p.weight_std(k),
                p.selected.contains(&k),
            )
        });
        crate::vb::write_pip_rows(path, comment, intercept.chain(rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub data_fingerprint: String,
    pub data_seed: u64,
    pub converged: bool,
    pub config: DiscoveryConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveredSde {
    pub model: SdeModel,
    pub equations: Vec<EquationPosterior>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct PosteriorRecord<'a> {
    equation: String,
    converged: bool,
    iterations: usize,
    sbl_fallback: bool,
    intercept: f64,
    noise_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_clipped: Option<usize>,
    columns: Vec<ColumnRecord<'a>>,
}

#[derive(Serialize)]
struct ColumnRecord<'a> {
    name: &'a str,
    pip: f64,
    weight_mean: f64,
    weight_std: f64,
    selected: bool,
}

#[derive(Serialize)]
struct DiscoveredFile<'a> {
    model: ModelFile,
    posteriors: Vec<PosteriorRecord<'a>>,
    provenance: &'a Provenance,
}

impl DiscoveredSde {
    pub fn equation(&self, kind: TargetKind) -> Option<&EquationPosterior> {
        self.equations.iter().find(|e| e.kind == kind)
    }

    /// The model file plus `posteriors` and `provenance` sections; readable
    /// by [`SdeModel::load`].
    pub fn to_json(&self) -> String {
        let posteriors = self
            .equations
            .iter()
            .map(|e| PosteriorRecord {
                equation: e.label(),
                converged: e.posterior.converged,
                iterations: e.posterior.iterations,
                sbl_fallback: e.posterior.sbl_fallback,
                intercept: e.posterior.intercept,
                noise_variance: e.posterior.noise_variance(),
                negative_clipped: e.negative_clipped,
                columns: e
                    .column_names
                    .iter()
                    .enumerate()
                    .map(|(k, name)| ColumnRecord {
                        name,
                        pip: e.posterior.pip[k],
                        weight_mean: e.posterior.mu_theta[k],
                        weight_std: e.posterior.weight_std(k),
                        selected: e.posterior.selected.contains(&k),
                    })
                    .collect(),
            })
            .collect();
        let file = DiscoveredFile {
            model: self.model.to_file(),
            posteriors,
            provenance: &self.provenance,
        };
        serde_json::to_string_pretty(&file).expect("discovery output serialises")
    }
}

/// Shared per-ensemble data: regression states and the drift design.
struct Workspace {
    states: StateMatrix,
    drift_design: Option<DesignStats>,
    diffusion_design: Option<DesignStats>,
}

impl Workspace {
    fn new(ens: &Ensemble, cfg: &DiscoveryConfig) -> Result<Self> {
        let states = regression_states(ens);
        let m = ens.dim();
        let drift_design = if cfg.drift_states.is_empty() {
            None
        } else {
            Some(DesignStats::compute(&states, cfg.dictionary.columns(m)?)?)
        };
        let diffusion_design = if cfg.diffusion_states.is_empty() {
            None
        } else {
            match &drift_design {
                Some(d) if *cfg.diffusion_dict() == cfg.dictionary => Some(d.clone()),
                _ => Some(DesignStats::compute(&states, cfg.diffusion_dict().columns(m)?)?),
            }
        };
        Ok(Workspace {
            states,
            drift_design,
            diffusion_design,
        })
    }
}

fn regress(
    design: &DesignStats,
    states: &StateMatrix,
    targets: &TargetSet,
    hyper: &SsHyperparams,
) -> Result<EquationPosterior> {
    let (stats, std) = design.target_stats(states, &targets.y)?;
    let post = run_vb_stats(&stats, hyper)?;
    let (mu, sigma, intercept) = destandardize_weights(&post.mu_theta, &post.sigma_theta, &std)?;
    let posterior = PosteriorSummary {
        mu_theta: mu,
        sigma_theta: sigma,
        intercept,
        ..post
    };
    let columns: Vec<BasisTerm> = design.retained.iter().map(|&k| design.columns[k].clone()).collect();
    Ok(EquationPosterior {
        kind: targets.kind,
        column_names: columns.iter().map(ToString::to_string).collect(),
        columns,
        posterior,
        negative_clipped: None,
        constant_share: None,
    })
}

fn drift_equation(ws: &Workspace, ens: &Ensemble, i: usize, cfg: &DiscoveryConfig) -> Result<EquationPosterior> {
    let label = TargetKind::Drift(i).to_string();
    let design = ws
        .drift_design
        .as_ref()
        .expect("drift design exists when drift_states is set");
    let targets = drift_targets(ens, i).map_err(|e| e.in_equation(&label))?;
    regress(design, &ws.states, &targets, &cfg.hyper).map_err(|e| e.in_equation(&label))
}

fn diffusion_equation(
    ws: &Workspace,
    ens: &Ensemble,
    i: usize,
    drift: Option<&BasisExpansion>,
    cfg: &DiscoveryConfig,
) -> Result<(EquationPosterior, BasisExpansion, DiffusionForm)> {
    let label = TargetKind::Diffusion(i, i).to_string();
    let run = || -> Result<_> {
        let design = ws.diffusion_design.as_ref().expect("diffusion design exists");
        let opts = DiffusionTargetOptions {
            half_factor: cfg.half_factor,
            drift: match (cfg.diffusion_targets, drift) {
                (DiffusionTargetKind::DriftCorrected, Some(f)) => Some((f, f)),
                _ => None,
            },
        };
        let targets = diffusion_targets_with(ens, i, i, &opts)?;
        let mut eq = regress(design, &ws.states, &targets, &cfg.hyper)?;
        let m = ens.dim();
        let variance = eq.expansion(m)?;
        if eq.posterior.selected.is_empty() {
            let c = eq.posterior.intercept;
            if c < 0.0 {
                return Err(Error::DiscoveryFailure(format!(
                    "fitted constant variance {c} is negative"
                )));
            }
            eq.negative_clipped = Some(0);
            eq.constant_share = Some(1.0);
            return Ok((eq, BasisExpansion::constant(m, c.sqrt()), DiffusionForm::Direct));
        }
        let mut negative = 0usize;
        let mut abs_sum = 0.0;
        for x in ws.states.rows() {
            let v = variance.eval(x);
            if v < 0.0 {
                negative += 1;
            }
            abs_sum += v.abs();
        }
        let n = ws.states.n_rows();
        if negative == n {
            return Err(Error::DiscoveryFailure(
                "fitted variance is negative at every training state".into(),
            ));
        }
        eq.negative_clipped = Some(negative);
        eq.constant_share = Some(eq.posterior.intercept.abs() / (abs_sum / n as f64));
        Ok((eq, variance, DiffusionForm::SqrtVariance))
    };
    run().map_err(|e| e.in_equation(&label))
}

/// Drift of state `i`: targets, dictionary, standardisation, VB, destandardisation.
pub fn discover_drift(ens: &Ensemble, i: usize, cfg: &DiscoveryConfig) -> Result<(BasisExpansion, EquationPosterior)> {
    if let Some(&(_, v)) = cfg.kinematic_pairs.iter().find(|(d, _)| *d == i) {
        return Err(Error::invalid(
            "drift_states",
            format!("state {i} is kinematic (drift = x{}); it is not regressed", v + 1),
        ));
    }
    let mut c = cfg.clone();
    c.drift_states = vec![i];
    c.diffusion_states.clear();
    c.validate(ens.dim())?;
    let ws = Workspace::new(ens, &c)?;
    let eq = drift_equation(&ws, ens, i, &c)?;
    Ok((eq.expansion(ens.dim())?, eq))
}

/// Diagonal diffusion of state `i`. The returned expansion is `g_ii` itself
/// for a constant-only fit, otherwise the fitted variance (to be read with
/// [`DiffusionForm::SqrtVariance`]).
pub fn discover_diffusion(
    ens: &Ensemble,
    i: usize,
    drift: Option<&BasisExpansion>,
    cfg: &DiscoveryConfig,
) -> Result<(BasisExpansion, DiffusionForm, EquationPosterior)> {
    let mut c = cfg.clone();
    c.diffusion_states = vec![i];
    c.drift_states.clear();
    c.validate(ens.dim())?;
    let ws = Workspace::new(ens, &c)?;
    let (eq, g, form) = diffusion_equation(&ws, ens, i, drift, &c)?;
    Ok((g, form, eq))
}

/// Builds the model: regressed drifts, kinematic drifts `x_d' = x_v`,
/// diffusion where discovered and zero elsewhere.
pub fn assemble_model(
    label: &str,
    m: usize,
    drift: &[(usize, BasisExpansion)],
    diffusion: &[(usize, BasisExpansion, DiffusionForm)],
    kinematic_pairs: &[(usize, usize)],
) -> Result<SdeModel> {
    let mut drifts: Vec<Option<BasisExpansion>> = vec![None; m];
    for (i, e) in drift {
        if *i >= m {
            return Err(Error::invalid("drift", format!("state {i} out of range")));
        }
        drifts[*i] = Some(e.clone());
    }
    for &(d, v) in kinematic_pairs {
        if d >= m || v >= m {
            return Err(Error::invalid(
                "kinematic_pairs",
                format!("pair ({d}, {v}) out of range"),
            ));
        }
        drifts[d] = Some(BasisExpansion::new(m, vec![(BasisTerm::linear(v), 1.0)])?);
    }
    let drift: Vec<BasisExpansion> = drifts
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.ok_or(Error::UncoveredState(i)))
        .collect::<Result<_>>()?;
    let mut diff = vec![BasisExpansion::zero(m); m];
    let mut forms = vec![DiffusionForm::Direct; m];
    for (i, e, f) in diffusion {
        if *i >= m {
            return Err(Error::invalid("diffusion", format!("state {i} out of range")));
        }
        diff[*i] = e.clone();
        forms[*i] = *f;
    }
    let mut kinematic = vec![false; m];
    for &(d, _) in kinematic_pairs {
        kinematic[d] = true;
    }
    SdeModel::with_forms(label, drift, diff, forms, kinematic)
}

/// Runs every configured drift and diffusion regression on `ens`.
pub fn discover(ens: &Ensemble, cfg: &DiscoveryConfig, label: &str) -> Result<DiscoveredSde> {
    let m = ens.dim();
    cfg.validate(m)?;
    let prepared;
    let ens = if cfg.derive_velocities && !cfg.kinematic_pairs.is_empty() {
        let mut e = ens.clone();
        for &(d, v) in &cfg.kinematic_pairs {
            e.derive_velocity(d, v)?;
        }
        prepared = e;
        &prepared
    } else {
        ens
    };
    let ws = Workspace::new(ens, cfg)?;

    let drift_eqs: Vec<Result<EquationPosterior>> = cfg
        .drift_states
        .par_iter()
        .map(|&i| drift_equation(&ws, ens, i, cfg))
        .collect();
    let drift_eqs = drift_eqs.into_iter().collect::<Result<Vec<_>>>()?;
    let drift_parts: Vec<(usize, BasisExpansion)> = cfg
        .drift_states
        .iter()
        .zip(&drift_eqs)
        .map(|(&i, eq)| Ok((i, eq.expansion(m)?)))
        .collect::<Result<_>>()?;

    let diff_results: Vec<Result<(EquationPosterior, BasisExpansion, DiffusionForm)>> = cfg
        .diffusion_states
        .par_iter()
        .map(|&i| {
            let f = drift_parts.iter().find(|(j, _)| *j == i).map(|(_, e)| e);
            diffusion_equation(&ws, ens, i, f, cfg)
        })
        .collect();
    let diff_results = diff_results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut equations = drift_eqs;
    let mut diffusion_parts = Vec::new();
    for (&i, (eq, g, form)) in cfg.diffusion_states.iter().zip(diff_results) {
        equations.push(eq);
        diffusion_parts.push((i, g, form));
    }
    let model = assemble_model(label, m, &drift_parts, &diffusion_parts, &cfg.kinematic_pairs)?;
    let converged = equations.iter().all(|e| e.posterior.converged);
    Ok(DiscoveredSde {
        model,
        equations,
        provenance: Provenance {
            config_hash: None,
            data_fingerprint: ens.fingerprint(),
            data_seed: ens.seed(),
            converged,
            config: cfg.clone(),
        },
    })
}
