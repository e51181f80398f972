//! Itô SDE models `dX = f(X) dt + g(X) dB` with diagonal diffusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, TermRecord};
use crate::error::{Error, Result};

/// How a diffusion expansion maps to the noise coefficient `g_ii`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionForm {
    /// The expansion is `g_ii` itself.
    #[default]
    Direct,
    /// The expansion is the variance `g_ii^2`; `g_ii = sqrt(max(0, expansion))`.
    SqrtVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    label: String,
    dim: usize,
    drift: Vec<BasisExpansion>,
    diffusion: Vec<BasisExpansion>,
    diffusion_form: Vec<DiffusionForm>,
    /// Kinematic rows (displacement of a second-order system): no noise, and
    /// the semi-implicit integrator updates them from the fresh velocities.
    kinematic: Vec<bool>,
}

impl SdeModel {
    pub fn new(label: impl Into<String>, drift: Vec<BasisExpansion>, diffusion: Vec<BasisExpansion>) -> Result<Self> {
        let dim = drift.len();
        let forms = vec![DiffusionForm::Direct; dim];
        SdeModel::with_forms(label, drift, diffusion, forms, vec![false; dim])
    }

    pub fn with_forms(
        label: impl Into<String>,
        drift: Vec<BasisExpansion>,
        diffusion: Vec<BasisExpansion>,
        diffusion_form: Vec<DiffusionForm>,
        kinematic: Vec<bool>,
    ) -> Result<Self> {
        let dim = drift.len();
        if dim == 0 {
            return Err(Error::invalid("dim", "model needs at least one state"));
        }
        if diffusion.len() != dim || diffusion_form.len() != dim || kinematic.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "model with {dim} drift rows has {} diffusion rows, {} forms, {} kinematic flags",
                diffusion.len(),
                diffusion_form.len(),
                kinematic.len()
            )));
        }
        for (i, e) in drift.iter().chain(diffusion.iter()).enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "expansion {} is over {} states, model has {dim}",
                    i % dim,
                    e.dim()
                )));
            }
        }
        for i in 0..dim {
            if kinematic[i] && diffusion[i].terms().iter().any(|(_, w)| *w != 0.0) {
                return Err(Error::invalid(
                    "diffusion",
                    format!("kinematic state x{} must have zero diffusion", i + 1),
                ));
            }
        }
        Ok(SdeModel {
            label: label.into(),
            dim,
            drift,
            diffusion,
            diffusion_form,
            kinematic,
        })
    }

    /// Marks states as kinematic.
    pub fn with_kinematic(mut self, states: &[usize]) -> Result<Self> {
        for &i in states {
            if i >= self.dim {
                return Err(Error::invalid("kinematic", format!("state {i} out of range")));
            }
            if !self.diffusion[i].is_empty() {
                return Err(Error::invalid(
                    "diffusion",
                    format!("kinematic state x{} must have zero diffusion", i + 1),
                ));
            }
            self.kinematic[i] = true;
        }
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[BasisExpansion] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[BasisExpansion] {
        &self.diffusion
    }

    pub fn diffusion_form(&self) -> &[DiffusionForm] {
        &self.diffusion_form
    }

    pub fn is_kinematic(&self, i: usize) -> bool {
        self.kinematic[i]
    }

    pub fn kinematic_states(&self) -> Vec<usize> {
        (0..self.dim).filter(|&i| self.kinematic[i]).collect()
    }

    /// States whose diffusion is not identically zero.
    pub fn noisy_states(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|&i| self.diffusion[i].terms().iter().any(|(_, w)| *w != 0.0))
            .collect()
    }

    #[inline]
    pub fn drift_row(&self, i: usize, x: &[f64]) -> f64 {
        self.drift[i].eval(x)
    }

    #[inline]
    pub fn diffusion_row(&self, i: usize, x: &[f64]) -> f64 {
        let v = self.diffusion[i].eval(x);
        match self.diffusion_form[i] {
            DiffusionForm::Direct => v,
            DiffusionForm::SqrtVariance => v.max(0.0).sqrt(),
        }
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.drift_row(i, x);
        }
    }

    pub fn diffusion_at(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.diffusion_row(i, x);
        }
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            label: self.label.clone(),
            dim: self.dim,
            drift: self.drift.iter().map(BasisExpansion::to_records).collect(),
            diffusion: self.diffusion.iter().map(BasisExpansion::to_records).collect(),
            diffusion_form: self.diffusion_form.clone(),
            kinematic: self.kinematic_states(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let dim = file.dim;
        if file.drift.len() != dim || file.diffusion.len() != dim {
            return Err(Error::Parse(format!(
                "model declares dim {dim} but has {} drift and {} diffusion rows",
                file.drift.len(),
                file.diffusion.len()
            )));
        }
        let drift = file
            .drift
            .iter()
            .map(|r| BasisExpansion::from_records(dim, r))
            .collect::<Result<Vec<_>>>()?;
        let diffusion = file
            .diffusion
            .iter()
            .map(|r| BasisExpansion::from_records(dim, r))
            .collect::<Result<Vec<_>>>()?;
        let forms = if file.diffusion_form.is_empty() {
            vec![DiffusionForm::Direct; dim]
        } else {
            file.diffusion_form.clone()
        };
        let mut kinematic = vec![false; dim];
        for &i in &file.kinematic {
            if i >= dim {
                return Err(Error::Parse(format!("kinematic state {i} out of range")));
            }
            kinematic[i] = true;
        }
        SdeModel::with_forms(file.label.clone(), drift, diffusion, forms, kinematic)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        SdeModel::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // A discovery output embeds the model under `model`.
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let model_value = match value.get("model") {
            Some(m) => m.clone(),
            None => value,
        };
        let file: ModelFile =
            serde_json::from_value(model_value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        SdeModel::from_file(&file)
    }
}

/// On-disk model format shared by discovery output and reliability input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default)]
    pub label: String,
    pub dim: usize,
    pub drift: Vec<Vec<TermRecord>>,
    pub diffusion: Vec<Vec<TermRecord>>,
    #[serde(default)]
    pub diffusion_form: Vec<DiffusionForm>,
    #[serde(default)]
    pub kinematic: Vec<usize>,
}
