//! Exact scores and score Jacobians of the latent model, and their transport
//! through linear maps.
//!
//! With w_i = 1/σ_i², u_i = z_i − f_i(z_pa(i)) and ∇u_i = e_i − ∇f_i (embedded
//! at the parents):
//!
//! ```text
//! log p(z) = −½ Σ w_i u_i² − ½ Σ log(2π σ_i²)
//! s(z)     = −Σ w_i u_i ∇u_i
//! J(z)     = −Σ w_i ∇u_i ∇u_iᵀ + Σ w_i u_i ∇²f_i
//! ```
//!
//! For x = H z with full column rank H, J_X = (H†)ᵀ J_Z H† and s_X = (H†)ᵀ s_Z.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::scm::Scm;
use crate::synth::MixingMatrix;

/// Coordinates a batch lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Latent,
    Observed,
    EstimatedLatent,
}

/// How a batch was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    Estimated,
    Perturbed,
    External,
}

/// Per-sample symmetric score Jacobians with their mean and zero-centered forms.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBatch {
    dim: usize,
    raw: Vec<DMatrix<f64>>,
    mean: Option<DMatrix<f64>>,
    centered: Vec<DMatrix<f64>>,
    space: Space,
    source: Source,
}

impl JacobianBatch {
    /// Symmetrizes every matrix as (J + Jᵀ)/2. The batch is not centered yet.
    pub fn new(raw: Vec<DMatrix<f64>>, space: Space, source: Source) -> Result<Self> {
        let dim = raw.first().map(|m| m.nrows()).unwrap_or(0);
        let mut raw = raw;
        for m in raw.iter_mut() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Dimension("Jacobians must all be square of equal size".into()));
            }
            symmetrize(m);
        }
        Ok(Self { dim, raw, mean: None, centered: Vec::new(), space, source })
    }

    /// [`JacobianBatch::new`] followed by [`JacobianBatch::center`].
    pub fn centered_from(raw: Vec<DMatrix<f64>>, space: Space, source: Source) -> Result<Self> {
        Self::new(raw, space, source)?.center()
    }

    /// Fills J̄ = (1/N)ΣJ and J̃⁽ᵐ⁾ = J⁽ᵐ⁾ − J̄.
    pub fn center(mut self) -> Result<Self> {
        if self.raw.len() < 2 {
            return Err(Error::Degenerate("centering needs at least two Jacobians".into()));
        }
        let mut mean = DMatrix::zeros(self.dim, self.dim);
        for m in &self.raw {
            mean += m;
        }
        mean /= self.raw.len() as f64;
        self.centered = self.raw.iter().map(|m| m - &mean).collect();
        self.mean = Some(mean);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn raw(&self) -> &[DMatrix<f64>] {
        &self.raw
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    pub fn mean(&self) -> Result<&DMatrix<f64>> {
        self.mean
            .as_ref()
            .ok_or_else(|| Error::Degenerate("batch has not been centered".into()))
    }

    pub fn centered(&self) -> Result<&[DMatrix<f64>]> {
        if self.mean.is_none() {
            return Err(Error::Degenerate("batch has not been centered".into()));
        }
        Ok(&self.centered)
    }

    /// Per-sample congruence Pᵀ J P (P is d×k). Centering is kept if present.
    pub fn congruence(&self, p: &DMatrix<f64>, space: Space) -> Result<Self> {
        if p.nrows() != self.dim {
            return Err(Error::Dimension(format!(
                "map has {} rows, Jacobians are {}×{}",
                p.nrows(),
                self.dim,
                self.dim
            )));
        }
        let pt = p.transpose();
        let raw = self.raw.iter().map(|m| &pt * m * p).collect();
        let out = Self::new(raw, space, self.source)?;
        if self.is_centered() {
            out.center()
        } else {
            Ok(out)
        }
    }

    /// Sub-batch of the given samples, re-centered if the original was.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let raw = idx.iter().map(|&i| self.raw[i].clone()).collect();
        let out = Self::new(raw, self.space, self.source)?;
        if self.is_centered() {
            out.center()
        } else {
            Ok(out)
        }
    }
}

fn embed_residual_gradient(scm: &Scm, i: usize, grad_f: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(scm.n());
    g[i] = 1.0;
    for (k, &p) in scm.dag().parents(i).iter().enumerate() {
        g[p] -= grad_f[k];
    }
    g
}

fn residuals(scm: &Scm, z: &[f64]) -> Vec<f64> {
    (0..scm.n()).map(|i| z[i] - scm.mean_of(i, z)).collect()
}

/// Exact latent score s_Z(z).
pub fn score_latent(scm: &Scm, z: &[f64]) -> DVector<f64> {
    let u = residuals(scm, z);
    let mut s = DVector::zeros(scm.n());
    for i in 0..scm.n() {
        let pv = scm.parent_values(i, z);
        let g = embed_residual_gradient(scm, i, &scm.mechanism(i).gradient(&pv));
        s.axpy(-u[i] / scm.noise_vars()[i], &g, 1.0);
    }
    s
}

/// Exact latent score Jacobian J_Z(z), symmetric.
pub fn jacobian_latent(scm: &Scm, z: &[f64]) -> DMatrix<f64> {
    jacobian_with_residuals(scm, z, &residuals(scm, z))
}

/// J_Z(z) with the residuals u_i = z_i − f_i supplied by the caller (e.g. the
/// known noise draws, which avoids cancellation when f_i is large).
pub fn jacobian_with_residuals(scm: &Scm, z: &[f64], u: &[f64]) -> DMatrix<f64> {
    let n = scm.n();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let w = 1.0 / scm.noise_vars()[i];
        let ps = scm.dag().parents(i);
        let pv = scm.parent_values(i, z);
        let mech = scm.mechanism(i);
        let g = embed_residual_gradient(scm, i, &mech.gradient(&pv));
        j.ger(-w, &g, &g, 1.0);
        if !ps.is_empty() {
            let h = mech.hessian(&pv);
            for (a, &pa) in ps.iter().enumerate() {
                for (b, &pb) in ps.iter().enumerate() {
                    j[(pa, pb)] += w * u[i] * h[(a, b)];
                }
            }
        }
    }
    symmetrize(&mut j);
    j
}

/// log p(z) of the latent model.
pub fn log_density(scm: &Scm, z: &[f64]) -> f64 {
    let u = residuals(scm, z);
    let tau = std::f64::consts::TAU;
    (0..scm.n())
        .map(|i| {
            let v = scm.noise_vars()[i];
            -0.5 * u[i] * u[i] / v - 0.5 * (tau * v).ln()
        })
        .sum()
}

/// Oracle latent batch at the rows of `z` (N×n), centered.
pub fn oracle_batch(scm: &Scm, z: &DMatrix<f64>) -> Result<JacobianBatch> {
    check_cols(scm, z)?;
    let raw = (0..z.nrows())
        .map(|m| {
            let row: Vec<f64> = z.row(m).iter().copied().collect();
            jacobian_latent(scm, &row)
        })
        .collect();
    JacobianBatch::centered_from(raw, Space::Latent, Source::Oracle)
}

/// Oracle latent batch using the known residuals `u` (N×n) of each row.
pub fn oracle_batch_with_residuals(
    scm: &Scm,
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> Result<JacobianBatch> {
    check_cols(scm, z)?;
    if u.shape() != z.shape() {
        return Err(Error::Dimension("residual matrix shape".into()));
    }
    let raw = (0..z.nrows())
        .map(|m| {
            let row: Vec<f64> = z.row(m).iter().copied().collect();
            let ur: Vec<f64> = u.row(m).iter().copied().collect();
            jacobian_with_residuals(scm, &row, &ur)
        })
        .collect();
    JacobianBatch::centered_from(raw, Space::Latent, Source::Oracle)
}

fn check_cols(scm: &Scm, z: &DMatrix<f64>) -> Result<()> {
    if z.ncols() != scm.n() {
        return Err(Error::Dimension(format!(
            "latent matrix has {} columns, model has {} nodes",
            z.ncols(),
            scm.n()
        )));
    }
    Ok(())
}

/// J_X = (H†)ᵀ J_Z H† for every sample.
pub fn latent_to_observed(batch: &JacobianBatch, h: &MixingMatrix) -> Result<JacobianBatch> {
    if batch.space() != Space::Latent {
        return Err(Error::Structure("latent_to_observed expects a latent batch".into()));
    }
    if batch.dim() != h.n() {
        return Err(Error::Dimension(format!(
            "batch dimension {} but mixing has {} columns",
            batch.dim(),
            h.n()
        )));
    }
    batch.congruence(h.pinv(), Space::Observed)
}

/// s_X = (H†)ᵀ s_Z.
pub fn score_to_observed(s_z: &DVector<f64>, h: &MixingMatrix) -> DVector<f64> {
    h.pinv().transpose() * s_z
}

/// J_Ẑ⁽ᵐ⁾ = Ĥᵀ J_X⁽ᵐ⁾ Ĥ with Ĥ of shape d×k.
pub fn pull_back(batch: &JacobianBatch, h_hat: &DMatrix<f64>) -> Result<JacobianBatch> {
    batch.congruence(h_hat, Space::EstimatedLatent)
}

/// (1/N) Σₘ (J̃⁽ᵐ⁾ᵢᵢ)² for each i.
pub fn diag_variance(batch: &JacobianBatch) -> Result<DVector<f64>> {
    let c = batch.centered()?;
    let n = c.len() as f64;
    Ok(DVector::from_fn(batch.dim(), |i, _| {
        c.iter().map(|m| m[(i, i)] * m[(i, i)]).sum::<f64>() / n
    }))
}

const MAGIC: &[u8; 4] = b"JACB";
const VERSION: u32 = 1;

fn space_code(s: Space) -> u8 {
    match s {
        Space::Latent => 0,
        Space::Observed => 1,
        Space::EstimatedLatent => 2,
    }
}

fn source_code(s: Source) -> u8 {
    match s {
        Source::Oracle => 0,
        Source::Estimated => 1,
        Source::Perturbed => 2,
        Source::External => 3,
    }
}

/// Binary layout (little endian): `JACB`, u32 version, u64 N, u64 d, u8 space,
/// u8 source, then N row-major d×d f64 matrices.
pub fn write_batch(path: &Path, batch: &JacobianBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(batch.len() as u64).to_le_bytes())?;
    w.write_all(&(batch.dim() as u64).to_le_bytes())?;
    w.write_all(&[space_code(batch.space()), source_code(batch.source())])?;
    for m in batch.raw() {
        for i in 0..batch.dim() {
            for j in 0..batch.dim() {
                w.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a batch written by [`write_batch`]; centered when N ≥ 2.
pub fn read_batch(path: &Path) -> Result<JacobianBatch> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a Jacobian batch file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported Jacobian file version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let d = u64::from_le_bytes(b8) as usize;
    let mut tags = [0u8; 2];
    r.read_exact(&mut tags)?;
    let space = match tags[0] {
        0 => Space::Latent,
        1 => Space::Observed,
        2 => Space::EstimatedLatent,
        t => return Err(Error::Format(format!("unknown space tag {t}"))),
    };
    let source = match tags[1] {
        0 => Source::Oracle,
        1 => Source::Estimated,
        2 => Source::Perturbed,
        3 => Source::External,
        t => return Err(Error::Format(format!("unknown source tag {t}"))),
    };
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                r.read_exact(&mut b8)?;
                m[(i, j)] = f64::from_le_bytes(b8);
            }
        }
        raw.push(m);
    }
    let batch = JacobianBatch::new(raw, space, source)?;
    if n >= 2 {
        batch.center()
    } else {
        Ok(batch)
    }
}

/// One-row CSV of the diagonal variances, header `v0,v1,…`.
pub fn write_diag_variance_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    crate::io::write_matrix_csv(path, &DMatrix::from_row_slice(1, v.len(), v.as_slice()), "v")
}
