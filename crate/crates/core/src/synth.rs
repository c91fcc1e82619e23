//! Seeded synthetic data: noise variances, SCM samples, min-max scaling of the
//! latents and linear mixing.
//!
//! Random streams (see [`crate::rng`]): noise variances use `NOISE_VARIANCES`,
//! noise column `i` uses `NOISE_COLUMN_BASE + i`, mixing matrices use `MIXING`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use crate::linalg::{condition_ratio, pinv};
use crate::mechanism::MechanismRegistry;
use crate::rng;
use crate::scm::Scm;

const MIXING_ATTEMPTS: usize = 100;

/// Per-column min/max of the unscaled latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScaleInfo {
    /// Slopes `a` of the map z' = a z + b.
    pub fn slopes(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| 1.0 / (hi - lo)).collect()
    }

    /// Offsets `b` of the map z' = a z + b.
    pub fn offsets(&self) -> Vec<f64> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| -lo / (hi - lo))
            .collect()
    }
}

/// Row-aligned noise, latents and observations. `x` has zero columns until
/// [`mix`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub e: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub scale_info: Option<ScaleInfo>,
}

impl SampleBatch {
    pub fn new(e: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        if e.shape() != z.shape() {
            return Err(Error::Dimension("E and Z shapes differ".into()));
        }
        let n = z.nrows();
        Ok(Self { e, z, x: DMatrix::zeros(n, 0), scale_info: None })
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn is_mixed(&self) -> bool {
        self.x.ncols() > 0
    }
}

/// Full-column-rank d×n mixing matrix with its cached pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    h: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() < h.ncols() || h.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "mixing matrix must be d×n with d ≥ n ≥ 1, got {}×{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if !(condition_ratio(&h) > 1e-9) {
            return Err(Error::Degenerate("mixing matrix is not full column rank".into()));
        }
        let pinv = pinv(&h)?;
        let n = h.ncols();
        if (&pinv * &h - DMatrix::<f64>::identity(n, n)).amax() > 1e-8 {
            return Err(Error::Numeric("pseudo-inverse check failed".into()));
        }
        Ok(Self { h, pinv })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is well conditioned")
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn d(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }
}

/// σ_i² ~ U[0.1, 1], i.i.d.
pub fn sample_noise_variances(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, rng::NOISE_VARIANCES);
    (0..n).map(|_| r.random_range(0.1..=1.0)).collect()
}

/// Draws E (column i from its own stream) and evaluates Z in topological order.
pub fn sample_scm(scm: &Scm, n_samples: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n_samples == 0 {
        return Err(Error::Degenerate("sample count must be at least 1".into()));
    }
    let n = scm.n();
    let mut e = DMatrix::zeros(n_samples, n);
    for i in 0..n {
        let sd = scm.noise_vars()[i].sqrt();
        let mut r = rng::stream(seed, rng::NOISE_COLUMN_BASE + i as u64);
        for m in 0..n_samples {
            e[(m, i)] = sd * r.sample::<f64, _>(StandardNormal);
        }
    }
    let mut z = DMatrix::zeros(n_samples, n);
    let mut row = vec![0.0; n];
    for m in 0..n_samples {
        for &i in scm.dag().topological_order() {
            row[i] = scm.mean_of(i, &row) + e[(m, i)];
        }
        for i in 0..n {
            z[(m, i)] = row[i];
        }
    }
    Ok((e, z))
}

/// Maps each latent column affinely onto [0, 1]; E and X are left untouched.
pub fn min_max_scale(batch: &SampleBatch) -> Result<SampleBatch> {
    let n = batch.z.ncols();
    let mut min = vec![0.0; n];
    let mut max = vec![0.0; n];
    for j in 0..n {
        let col = batch.z.column(j);
        min[j] = col.min();
        max[j] = col.max();
        if !(max[j] > min[j]) {
            return Err(Error::Degenerate(format!("latent column {j} is constant")));
        }
    }
    let mut z = batch.z.clone();
    for j in 0..n {
        let width = max[j] - min[j];
        for v in z.column_mut(j).iter_mut() {
            *v = (*v - min[j]) / width;
        }
    }
    let info = ScaleInfo { min, max };
    Ok(SampleBatch { e: batch.e.clone(), z, x: batch.x.clone(), scale_info: Some(info) })
}

/// Standard normal d×n matrix, redrawn until σ_min/σ_max > 1e-9.
pub fn sample_mixing(d: usize, n: usize, seed: u64) -> Result<MixingMatrix> {
    if d < n || n == 0 {
        return Err(Error::Dimension(format!("mixing requires d ≥ n ≥ 1, got d={d}, n={n}")));
    }
    let mut r = rng::stream(seed, rng::MIXING);
    for _ in 0..MIXING_ATTEMPTS {
        let h = DMatrix::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal));
        if let Ok(m) = MixingMatrix::new(h) {
            return Ok(m);
        }
    }
    Err(Error::RankDeficient(MIXING_ATTEMPTS))
}

/// X = Z Hᵀ (row m of X is H · z⁽ᵐ⁾).
pub fn mix(batch: &SampleBatch, h: &MixingMatrix) -> Result<SampleBatch> {
    if batch.z.ncols() != h.n() {
        return Err(Error::Dimension(format!(
            "latents have {} columns, mixing expects {}",
            batch.z.ncols(),
            h.n()
        )));
    }
    let mut out = batch.clone();
    out.x = &batch.z * h.h().transpose();
    Ok(out)
}

/// Everything produced by one seeded generation.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// The model as specified (unscaled).
    pub scm: Scm,
    /// The model of the scaled latents actually mixed into X.
    pub scaled_scm: Scm,
    /// `z` holds the scaled latents; `e` the original noise.
    pub batch: SampleBatch,
    pub mixing: MixingMatrix,
    pub seed: u64,
}

impl Dataset {
    /// Sample, min-max scale the latents and mix with a d×n Gaussian matrix.
    pub fn generate(scm: &Scm, n_samples: usize, d: usize, seed: u64) -> Result<Self> {
        let (e, z) = sample_scm(scm, n_samples, seed)?;
        let scaled = min_max_scale(&SampleBatch::new(e, z)?)?;
        let info = scaled.scale_info.as_ref().expect("just scaled");
        let scaled_scm = scm.affine_reparameterize(&info.slopes(), &info.offsets())?;
        let mixing = sample_mixing(d, scm.n(), seed)?;
        let batch = mix(&scaled, &mixing)?;
        Ok(Self { scm: scm.clone(), scaled_scm, batch, mixing, seed })
    }

    /// Noise of the scaled model, a_i · E_i.
    pub fn scaled_noise(&self) -> DMatrix<f64> {
        let a = self.batch.scale_info.as_ref().map(ScaleInfo::slopes);
        let mut u = self.batch.e.clone();
        if let Some(a) = a {
            for (j, mut col) in u.column_iter_mut().enumerate() {
                col *= a[j];
            }
        }
        u
    }

    /// Writes `scm.json`, `e.csv`, `z.csv`, `x.csv`, `h.csv` and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scm.json"), self.scm.to_json_string()?)?;
        write_matrix_csv(&dir.join("e.csv"), &self.batch.e, "e")?;
        write_matrix_csv(&dir.join("z.csv"), &self.batch.z, "z")?;
        write_matrix_csv(&dir.join("x.csv"), &self.batch.x, "x")?;
        write_matrix_csv(&dir.join("h.csv"), self.mixing.h(), "h")?;
        let manifest = DatasetManifest {
            seed: self.seed,
            n_samples: self.batch.len(),
            latent_dim: self.scm.n(),
            obs_dim: self.mixing.d(),
            scm: "scm.json".into(),
            h: "h.csv".into(),
            e: "e.csv".into(),
            z: "z.csv".into(),
            x: "x.csv".into(),
            scale_info: self.batch.scale_info.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }

    /// Reads a directory written by [`Dataset::write`].
    pub fn read(dir: &Path, registry: &MechanismRegistry) -> Result<Self> {
        let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        let scm = Scm::from_json_str(&std::fs::read_to_string(dir.join(&m.scm))?, registry)?;
        let (_, e) = read_matrix_csv(&dir.join(&m.e))?;
        let (_, z) = read_matrix_csv(&dir.join(&m.z))?;
        let (_, x) = read_matrix_csv(&dir.join(&m.x))?;
        let (_, h) = read_matrix_csv(&dir.join(&m.h))?;
        let n = scm.n();
        if e.shape() != (m.n_samples, n) || z.shape() != e.shape() || x.shape() != (m.n_samples, m.obs_dim) {
            return Err(Error::Format(format!("{}: matrix shapes disagree with the manifest", dir.display())));
        }
        let scaled_scm = match &m.scale_info {
            Some(info) => scm.affine_reparameterize(&info.slopes(), &info.offsets())?,
            None => scm.clone(),
        };
        Ok(Self {
            scm,
            scaled_scm,
            batch: SampleBatch { e, z, x, scale_info: m.scale_info },
            mixing: MixingMatrix::new(h)?,
            seed: m.seed,
        })
    }
}

/// Dataset manifest; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_samples: usize,
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub scm: PathBuf,
    pub h: PathBuf,
    pub e: PathBuf,
    pub z: PathBuf,
    pub x: PathBuf,
    pub scale_info: Option<ScaleInfo>,
}
