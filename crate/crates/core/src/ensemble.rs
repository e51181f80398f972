//! Sampled trajectories, ensembles of them, measurement noise and CSV I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Deterministic child seed for stream `j` of a run seeded with `seed`.
pub fn child_seed(seed: u64, j: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ j.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One sampled path: `n_rows` states of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    t0: f64,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.len() / dim < 2 {
            return Err(Error::InsufficientData("a trajectory needs at least 2 samples".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("states", "trajectory contains non-finite values"));
        }
        Ok(Trajectory { dt, t0, dim, data })
    }

    pub fn from_rows(dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Trajectory::new(dt, 0.0, dim, rows.concat())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.n_rows() - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn set_column(&mut self, i: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.n_rows() || i >= self.dim {
            return Err(Error::DimensionMismatch(
                "column replacement has the wrong shape".into(),
            ));
        }
        for (k, v) in values.iter().enumerate() {
            self.data[k * self.dim + i] = *v;
        }
        Ok(())
    }
}

/// Trajectories sharing `dt`, length and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trajectories: Vec<Trajectory>,
    seed: u64,
}

impl Ensemble {
    pub fn new(trajectories: Vec<Trajectory>, seed: u64) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InsufficientData("ensemble has no trajectories".into()))?;
        let (dt, n, m) = (first.dt(), first.n_rows(), first.dim());
        for (j, t) in trajectories.iter().enumerate() {
            if t.dt() != dt || t.n_rows() != n || t.dim() != m {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory {j} has shape {}x{} at dt={}, expected {n}x{m} at dt={dt}",
                    t.n_rows(),
                    t.dim(),
                    t.dt()
                )));
            }
        }
        Ok(Ensemble { trajectories, seed })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt()
    }

    pub fn n_rows(&self) -> usize {
        self.trajectories[0].n_rows()
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn n_paths(&self) -> usize {
        self.trajectories.len()
    }

    /// Population mean and standard deviation of state `i` over every sample.
    pub fn column_stats(&self, i: usize) -> (f64, f64) {
        let mut count = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for t in &self.trajectories {
            for r in t.rows() {
                count += 1;
                let d = r[i] - mean;
                mean += d / count as f64;
                m2 += d * (r[i] - mean);
            }
        }
        (mean, (m2 / count as f64).sqrt())
    }

    /// SHA-256 over dt, shape and every sample.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dt().to_le_bytes());
        h.update((self.n_paths() as u64).to_le_bytes());
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for t in &self.trajectories {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Overwrites state `vel` with the numerical derivative of state `disp`
    /// in every path.
    pub fn derive_velocity(&mut self, disp: usize, vel: usize) -> Result<()> {
        for t in &mut self.trajectories {
            let v = crate::km::velocity_from_displacement(&t.column(disp), t.dt())?;
            t.set_column(vel, &v)?;
        }
        Ok(())
    }
}

/// Adds `percent`% Gaussian measurement noise to every state column.
pub fn add_measurement_noise(ens: &Ensemble, percent: f64, seed: u64) -> Result<Ensemble> {
    let all: Vec<usize> = (0..ens.dim()).collect();
    add_measurement_noise_to(ens, percent, &all, seed)
}

/// Adds zero-mean Gaussian noise to the listed columns, with standard
/// deviation `percent/100` times that column's standard deviation over the
/// whole ensemble. Path `j` draws from stream `child_seed(seed, j)`.
pub fn add_measurement_noise_to(ens: &Ensemble, percent: f64, columns: &[usize], seed: u64) -> Result<Ensemble> {
    if !(percent >= 0.0 && percent.is_finite()) {
        return Err(Error::invalid("noise_percent", "must be a finite value >= 0"));
    }
    let m = ens.dim();
    if let Some(&bad) = columns.iter().find(|&&c| c >= m) {
        return Err(Error::invalid("noise_states", format!("state {bad} out of range")));
    }
    let mut out = ens.clone();
    if percent == 0.0 || columns.is_empty() {
        return Ok(out);
    }
    let scales: Vec<(usize, f64)> = columns
        .iter()
        .map(|&c| (c, percent / 100.0 * ens.column_stats(c).1))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    for (j, t) in out.trajectories.iter_mut().enumerate() {
        let mut rng = rng_for(child_seed(seed ^ NOISE_SALT, j as u64));
        for row in t.data_mut().chunks_exact_mut(m) {
            for &(c, s) in &scales {
                let z: f64 = StandardNormal.sample(&mut rng);
                row[c] += s * z;
            }
        }
    }
    Ok(out)
}

const NOISE_SALT: u64 = 0x6d65_6173_7572_6564;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub dt: f64,
    pub t0: f64,
    pub n_rows: usize,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

/// Writes `manifest.json` plus one `path_<j>.csv` per trajectory
/// (header `t,x1,...,xm`, preceded by a `#` provenance line when given).
pub fn write_ensemble(dir: &Path, ens: &Ensemble, config_hash: Option<&str>) -> Result<EnsembleManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = ens.dim();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("x{i}")))
        .collect();
    for (j, t) in ens.trajectories().iter().enumerate() {
        let path = dir.join(format!("path_{j}.csv"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            if let Some(h) = config_hash {
                writeln!(w, "# config_hash={h} seed={}", ens.seed())?;
            }
            writeln!(w, "{}", header.join(","))?;
            for (k, row) in t.rows().enumerate() {
                write!(w, "{}", t.time(k))?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(&path, e))?;
    }
    let manifest = EnsembleManifest {
        dt: ens.dt(),
        t0: ens.trajectories()[0].t0(),
        n_rows: ens.n_rows(),
        dim: m,
        n_paths: ens.n_paths(),
        seed: ens.seed(),
        config_hash: config_hash.map(str::to_string),
        fingerprint: Some(ens.fingerprint()),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_ensemble(dir: &Path) -> Result<Ensemble> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EnsembleManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if manifest.n_paths == 0 {
        return Err(Error::InsufficientData(format!("{} lists no paths", path.display())));
    }
    let mut trajectories = Vec::with_capacity(manifest.n_paths);
    for j in 0..manifest.n_paths {
        let path = dir.join(format!("path_{j}.csv"));
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_path(&path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut data = Vec::with_capacity(manifest.n_rows * manifest.dim);
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            if record.len() != manifest.dim + 1 {
                return Err(Error::Parse(format!(
                    "{}: expected {} columns, found {}",
                    path.display(),
                    manifest.dim + 1,
                    record.len()
                )));
            }
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("{}: bad number `{field}`", path.display())))?;
                data.push(v);
            }
        }
        let t = Trajectory::new(manifest.dt, manifest.t0, manifest.dim, data)?;
        if t.n_rows() != manifest.n_rows {
            return Err(Error::Parse(format!(
                "{}: {} rows, manifest says {}",
                path.display(),
                t.n_rows(),
                manifest.n_rows
            )));
        }
        trajectories.push(t);
    }
    Ensemble::new(trajectories, manifest.seed)
}
