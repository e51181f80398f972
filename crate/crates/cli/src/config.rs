//! Run configuration: one TOML file per study, with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdeid_core::dictionary::DictionaryConfig;
use sdeid_core::discovery::{DiffusionTargetKind, DiscoveryConfig};
use sdeid_core::vb::SsHyperparams;
use sdeid_core::{builtin_system, BuiltinSystem, Error, LimitState, McSettings, Result, Scheme, SdeModel};

pub const OUTPUT_DIR_ENV: &str = "SDEID_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in system name, or a model JSON path (relative to the config file).
    pub system: String,
    /// Initial state; defaults to the built-in's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub simulate: SimulateSection,
    #[serde(default)]
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub vb: SsHyperparams,
    #[serde(default)]
    pub discovery: DiscoverySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub noise_percent: f64,
    /// States that receive measurement noise; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_states: Option<Vec<usize>>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverySection {
    pub drift_states: Vec<usize>,
    pub diffusion_states: Vec<usize>,
    pub kinematic_pairs: Vec<(usize, usize)>,
    pub diffusion_targets: DiffusionTargetKind,
    pub half_factor: bool,
    pub derive_velocities: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_dictionary: Option<DictionaryConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilitySection {
    pub threshold: f64,
    #[serde(default)]
    pub state_index: usize,
    #[serde(default)]
    pub absolute: bool,
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub report_stride: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
}

fn default_dt() -> f64 {
    0.001
}

fn default_stride() -> f64 {
    0.1
}

/// A parsed config with the directory it came from and its hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

fn config_err(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

/// Sets `dotted.key = value` in a TOML table. The value is read as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = RunConfig::from_toml_str(&text, overrides).map_err(|e| {
            let msg = match e {
                Error::Config(m) => m,
                other => other.to_string(),
            };
            config_err(format!("{}: {msg}", path.display()))
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let hash = config.hash();
        Ok(LoadedConfig { config, base_dir, hash })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn validate(&self) -> Result<()> {
        let s = &self.simulate;
        if !(s.noise_percent >= 0.0 && s.noise_percent.is_finite()) {
            return Err(Error::invalid(
                "simulate.noise_percent",
                "must be finite and non-negative",
            ));
        }
        sdeid_core::simulate::steps_for(s.horizon, s.dt).map_err(|e| match e {
            Error::InvalidArgument { field, reason } => Error::invalid(format!("simulate.{field}"), reason),
            other => other,
        })?;
        if s.n_paths == 0 {
            return Err(Error::invalid("simulate.n_paths", "must be at least 1"));
        }
        self.vb.validate()?;
        self.dictionary.validate()?;
        Ok(())
    }

    pub fn discovery_config(&self) -> DiscoveryConfig {
        let d = &self.discovery;
        DiscoveryConfig {
            dictionary: self.dictionary.clone(),
            diffusion_dictionary: d.diffusion_dictionary.clone(),
            hyper: self.vb.clone(),
            drift_states: d.drift_states.clone(),
            diffusion_states: d.diffusion_states.clone(),
            kinematic_pairs: d.kinematic_pairs.clone(),
            diffusion_targets: d.diffusion_targets,
            half_factor: d.half_factor,
            derive_velocities: d.derive_velocities,
        }
    }

    pub fn builtin(&self) -> Option<BuiltinSystem> {
        self.system.parse().ok()
    }
}

impl ReliabilitySection {
    pub fn limit_state(&self) -> LimitState {
        LimitState {
            state_index: self.state_index,
            threshold: self.threshold,
            absolute: self.absolute,
        }
    }

    pub fn settings(&self, default_scheme: Scheme) -> McSettings {
        McSettings {
            dt: self.dt,
            horizon: self.horizon,
            n_paths: self.n_paths,
            seed: self.seed,
            report_stride: self.report_stride,
            scheme: self.scheme.unwrap_or(default_scheme),
        }
    }
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<LoadedConfig> {
        let config = RunConfig::from_toml_str(text, overrides)?;
        let hash = config.hash();
        Ok(LoadedConfig {
            config,
            base_dir: base_dir.to_path_buf(),
            hash,
        })
    }

    /// The generating model, its default start and its preferred scheme.
    pub fn system(&self) -> Result<(SdeModel, Vec<f64>, Scheme)> {
        let c = &self.config;
        let (model, default_x0, scheme) = match c.builtin() {
            Some(b) => {
                let (m, x0) = builtin_system(b);
                (m, Some(x0), b.recommended_scheme())
            }
            None => {
                let path = self.base_dir.join(&c.system);
                if !path.exists() {
                    return Err(config_err(format!(
                        "system `{}` is neither a built-in nor an existing model file",
                        c.system
                    )));
                }
                (SdeModel::load(&path)?, None, Scheme::Explicit)
            }
        };
        let x0 = match (&c.x0, default_x0) {
            (Some(x), _) => x.clone(),
            (None, Some(x)) => x,
            (None, None) => return Err(config_err("x0 is required for a model-file system")),
        };
        if x0.len() != model.dim() {
            return Err(config_err(format!(
                "x0 has {} entries, system has {} states",
                x0.len(),
                model.dim()
            )));
        }
        Ok((model, x0, c.simulate.scheme.unwrap_or(scheme)))
    }

    /// `--output-dir`, then the config's `output_dir`, then `$SDEID_OUTPUT_DIR`,
    /// then `sdeid-out`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(d) = &self.config.output_dir {
            return if d.is_absolute() {
                d.clone()
            } else {
                self.base_dir.join(d)
            };
        }
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("sdeid-out"),
        }
    }

    /// `config_hash=<hash> seed=<seed>`, the first line of every CSV.
    pub fn provenance_line(&self, seed: u64) -> String {
        format!("config_hash={} seed={seed}", self.hash)
    }
}
