//! The four subcommands. Each writes its artifacts under an output directory
//! and returns what it computed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sdeid_core::discovery::{discover, DiscoveredSde};
use sdeid_core::ensemble::{read_ensemble, write_ensemble};
use sdeid_core::km::TargetKind;
use sdeid_core::{
    add_measurement_noise_to, builtin_system, compare_curves, failure_probability, simulate_ensemble_with,
    BuiltinSystem, CurveComparison, Ensemble, Error, FailureCurve, Result, SdeModel,
};

use crate::config::LoadedConfig;

pub const ENSEMBLE_DIR: &str = "ensemble";
pub const DISCOVERED_FILE: &str = "discovered.json";
pub const COMPARISON_FILE: &str = "comparison.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn file_stem(kind: TargetKind) -> String {
    match kind {
        TargetKind::Drift(i) => format!("drift_x{}", i + 1),
        TargetKind::Diffusion(i, j) => format!("diffusion_x{}_x{}", i + 1, j + 1),
    }
}

/// Simulates the configured system, adds measurement noise and writes the
/// ensemble to `<out>/ensemble`.
pub fn cmd_simulate(cfg: &LoadedConfig, out: &Path) -> Result<Ensemble> {
    let (model, x0, scheme) = cfg.system()?;
    let s = &cfg.config.simulate;
    let clean = simulate_ensemble_with(&model, &x0, s.dt, s.horizon, s.n_paths, s.seed, scheme)?;
    let states: Vec<usize> = match &s.noise_states {
        Some(v) => v.clone(),
        None => (0..model.dim()).collect(),
    };
    let ens = add_measurement_noise_to(&clean, s.noise_percent, &states, s.seed)?;
    write_ensemble(&out.join(ENSEMBLE_DIR), &ens, Some(&cfg.hash))?;
    Ok(ens)
}

/// Discovers an SDE from the ensemble in `ensemble_dir`. Writes the model
/// with posteriors and provenance, plus one PIP table and one ELBO trace per
/// regression.
pub fn cmd_discover(cfg: &LoadedConfig, ensemble_dir: &Path, out: &Path) -> Result<DiscoveredSde> {
    let ens = read_ensemble(ensemble_dir)?;
    discover_ensemble(cfg, &ens, out)
}

pub fn discover_ensemble(cfg: &LoadedConfig, ens: &Ensemble, out: &Path) -> Result<DiscoveredSde> {
    create_dir(out)?;
    let label = format!("{}_discovered", system_label(cfg));
    let mut found = discover(ens, &cfg.config.discovery_config(), &label)?;
    found.provenance.config_hash = Some(cfg.hash.clone());
    let comment = cfg.provenance_line(ens.seed());
    for eq in &found.equations {
        let stem = file_stem(eq.kind);
        eq.write_pip_csv(&out.join(format!("pip_{stem}.csv")), Some(&comment))?;
        eq.posterior
            .write_elbo_csv(&out.join(format!("elbo_{stem}.csv")), Some(&comment))?;
    }
    let path = out.join(DISCOVERED_FILE);
    fs::write(&path, found.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(found)
}

fn system_label(cfg: &LoadedConfig) -> String {
    match cfg.config.builtin() {
        Some(b) => b.name().to_string(),
        None => Path::new(&cfg.config.system)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into()),
    }
}

/// A model to run reliability on, with where it came from.
#[derive(Debug, Clone)]
pub struct ModelSource {
    pub model: SdeModel,
    pub origin: String,
    pub provenance: Option<serde_json::Value>,
}

impl ModelSource {
    /// A built-in name, or a model / discovery JSON file.
    pub fn resolve(arg: &str) -> Result<ModelSource> {
        if let Ok(b) = arg.parse::<BuiltinSystem>() {
            return Ok(ModelSource {
                model: builtin_system(b).0,
                origin: format!("builtin:{}", b.name()),
                provenance: None,
            });
        }
        let path = PathBuf::from(arg);
        let model = SdeModel::load(&path)?;
        let provenance = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v.get("provenance").cloned());
        Ok(ModelSource {
            model,
            origin: path.display().to_string(),
            provenance,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct CurveSummary<'a> {
    model: &'a str,
    origin: &'a str,
    n_paths: usize,
    seed: u64,
    diverged: usize,
    final_pf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
struct ComparisonReport<'a> {
    config_hash: &'a str,
    sup_diff: f64,
    mean_abs_diff: f64,
    threshold: f64,
    state_index: usize,
    horizon: f64,
    curves: Vec<CurveSummary<'a>>,
}

#[derive(Debug, Clone)]
pub struct ReliabilityOutput {
    pub curves: Vec<FailureCurve>,
    pub comparison: Option<CurveComparison>,
}

/// First-passage curves for one or two models on the same grid and seeds;
/// with two, also writes `comparison.json`.
pub fn cmd_reliability(cfg: &LoadedConfig, models: &[ModelSource], out: &Path) -> Result<ReliabilityOutput> {
    let section = cfg
        .config
        .reliability
        .as_ref()
        .ok_or_else(|| Error::Config("the [reliability] section (with `threshold`) is required".into()))?;
    if models.is_empty() || models.len() > 2 {
        return Err(Error::invalid("models", "give one or two models"));
    }
    create_dir(out)?;
    let (_, x0, scheme) = cfg.system()?;
    let ls = section.limit_state();
    let settings = section.settings(scheme);
    let comment = cfg.provenance_line(settings.seed);
    let mut curves = Vec::new();
    for (idx, src) in models.iter().enumerate() {
        let curve = failure_probability(&src.model, &x0, &ls, &settings)?;
        let mut name = src.model.label().to_string();
        if idx == 1 && name == models[0].model.label() {
            name.push_str("_2");
        }
        curve.write_csv(&out.join(format!("pf_{name}.csv")), Some(&comment))?;
        curves.push(curve);
    }
    let comparison = if curves.len() == 2 {
        let cmp = compare_curves(&curves[0], &curves[1])?;
        let report = ComparisonReport {
            config_hash: &cfg.hash,
            sup_diff: cmp.sup_diff,
            mean_abs_diff: cmp.mean_abs_diff,
            threshold: section.threshold,
            state_index: section.state_index,
            horizon: section.horizon,
            curves: models
                .iter()
                .zip(&curves)
                .map(|(m, c)| CurveSummary {
                    model: m.model.label(),
                    origin: &m.origin,
                    n_paths: c.n_paths,
                    seed: c.seed,
                    diverged: c.diverged,
                    final_pf: c.final_pf(),
                    provenance: m.provenance.as_ref(),
                })
                .collect(),
        };
        let path = out.join(COMPARISON_FILE);
        let text = serde_json::to_string_pretty(&report).expect("report serialises");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Some(cmp)
    } else {
        None
    };
    Ok(ReliabilityOutput { curves, comparison })
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub ensemble: Ensemble,
    pub discovered: DiscoveredSde,
    pub reliability: Option<ReliabilityOutput>,
    pub output_dir: PathBuf,
}

/// simulate, discover, then (when configured) reliability of the true and
/// discovered models. Artifacts of finished stages stay on disk if a later
/// stage fails.
pub fn cmd_pipeline(cfg: &LoadedConfig, out: &Path) -> Result<PipelineReport> {
    create_dir(out)?;
    let ensemble = cmd_simulate(cfg, out)?;
    let discovered = discover_ensemble(cfg, &ensemble, out)?;
    let reliability = match &cfg.config.reliability {
        Some(_) => {
            let (truth, _, _) = cfg.system()?;
            let sources = [
                ModelSource {
                    origin: cfg.config.system.clone(),
                    model: truth,
                    provenance: None,
                },
                ModelSource {
                    origin: out.join(DISCOVERED_FILE).display().to_string(),
                    model: discovered.model.clone(),
                    provenance: serde_json::to_value(&discovered.provenance).ok(),
                },
            ];
            Some(cmd_reliability(cfg, &sources, out)?)
        }
        None => None,
    };
    Ok(PipelineReport {
        ensemble,
        discovered,
        reliability,
        output_dir: out.to_path_buf(),
    })
}
