//! Layer-by-layer recovery of latents from observations, then of the noises.
//!
//! Round k works with the current observations obs = X Wᵀ (k-dimensional).
//! Score Jacobians of obs come from a [`JacobianSource`]; they are whitened
//! with M = −J̄ (obs ← M^½ obs), which makes the directions of distinct leaves
//! orthogonal. Unit directions annihilating every centered Jacobian are
//! collected one at a time, completed to an orthogonal Ĥ with random columns,
//! and coordinates of Ĥᵀ obs whose Jacobian diagonal has zero variance are
//! emitted as layer k. The rest become the next round's observations.
//!
//! Noises are recovered top-down: the highest layer is its own noise, and each
//! lower layer is the kernel-ridge residual of its coordinates given all
//! higher layers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::perturb_jacobians;
use crate::krr::{self, KrrConfig};
use crate::linalg::{column_stds, random_unit, sym_apply};
use crate::oracle::{
    diag_variance, oracle_batch_with_residuals, pull_back, JacobianBatch, Source, Space,
};
use crate::rng;
use crate::scm::Scm;
use crate::solver::{
    find_null_direction_traced, min_feasibility_level, prune_outliers, SolverConfig, TraceEntry,
};
use crate::stein::{stein_jacobian, SteinConfig};
use crate::synth::Dataset;

/// Where a round's Jacobians came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOrigin {
    Oracle,
    Estimated,
    Perturbed,
    External,
    /// The previous round's batch restricted to the kept coordinates.
    PullBack,
}

/// Supplies score Jacobians of the current observations.
pub trait JacobianSource {
    /// Jacobians of obs = X Wᵀ (`w` is k×d, `obs` is N×k) in obs coordinates.
    /// `None` makes the round fall back to [`BatchOrigin::PullBack`].
    fn jacobians(
        &mut self,
        round: usize,
        w: &DMatrix<f64>,
        obs: &DMatrix<f64>,
    ) -> Result<Option<JacobianBatch>>;

    fn origin(&self) -> BatchOrigin;
}

/// Exact Jacobians of the marginal of the current observations, available
/// while obs is (numerically) an invertible map of an ancestrally closed set
/// of latents. The set is the closed one of the right size keeping the most
/// contribution energy.
#[derive(Debug, Clone)]
pub struct OracleSource {
    scm: Scm,
    z: DMatrix<f64>,
    residuals: DMatrix<f64>,
    h: DMatrix<f64>,
    /// Standard deviation of each latent, so loadings compare as contributions.
    spread: Vec<f64>,
    /// Largest allowed ratio of the biggest dropped to the biggest kept latent
    /// contribution |T eⱼ| sd(zⱼ).
    pub leak_tol: f64,
}

impl OracleSource {
    /// `z` are the latents of `scm` (N×n), `residuals` the noise realizations
    /// z_i − f_i, and `h` the d×n mixing with x = H z.
    pub fn new(scm: Scm, z: DMatrix<f64>, residuals: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if z.ncols() != scm.n() || residuals.shape() != z.shape() || h.ncols() != scm.n() {
            return Err(Error::Dimension("oracle source shapes disagree".into()));
        }
        let spread = column_stds(&z).iter().copied().collect();
        Ok(Self { scm, z, residuals, h, spread, leak_tol: 1e-3 })
    }

    /// Oracle for the scaled model that generated `data.batch.x`.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        Self::new(
            data.scaled_scm.clone(),
            data.batch.z.clone(),
            data.scaled_noise(),
            data.mixing.h().clone(),
        )
    }

    fn marginal(&self, w: &DMatrix<f64>) -> Result<Option<JacobianBatch>> {
        let k = w.nrows();
        let t = w * &self.h;
        let norms: Vec<f64> =
            t.column_iter().zip(&self.spread).map(|(c, s)| c.norm() * s).collect();
        let energy: Vec<f64> = norms.iter().map(|v| v * v).collect();
        let Some(set) = self.scm.dag().best_closed_subset(k, &energy) else {
            return Ok(None);
        };
        let kept = set.iter().map(|&j| norms[j]).fold(0.0, f64::max);
        let dropped = (0..norms.len())
            .filter(|j| !set.contains(j))
            .map(|j| norms[j])
            .fold(0.0, f64::max);
        if dropped > self.leak_tol * kept {
            return Ok(None);
        }
        let sub = self.scm.restrict(&set)?;
        let z = self.z.select_columns(set.iter());
        let u = self.residuals.select_columns(set.iter());
        let latent = oracle_batch_with_residuals(&sub, &z, &u)?;
        let t_s = t.select_columns(set.iter());
        let Some(t_inv) = t_s.try_inverse() else {
            return Ok(None);
        };
        Ok(Some(latent.congruence(&t_inv, Space::Observed)?))
    }
}

impl JacobianSource for OracleSource {
    fn jacobians(
        &mut self,
        _round: usize,
        w: &DMatrix<f64>,
        _obs: &DMatrix<f64>,
    ) -> Result<Option<JacobianBatch>> {
        self.marginal(w)
    }

    fn origin(&self) -> BatchOrigin {
        BatchOrigin::Oracle
    }
}

/// Oracle Jacobians plus symmetric Gaussian noise at a fixed SER, redrawn
/// every round. Noise is added in the whitened coordinates of the oracle
/// batch (where J̄ = −I), so the SER does not depend on the mixing matrix or
/// the latent scales.
#[derive(Debug, Clone)]
pub struct PerturbedSource {
    pub oracle: OracleSource,
    pub ser: f64,
    pub seed: u64,
}

impl PerturbedSource {
    pub fn new(mut oracle: OracleSource, ser: f64, seed: u64) -> Self {
        oracle.leak_tol = 1.0;
        Self { oracle, ser, seed }
    }
}

impl JacobianSource for PerturbedSource {
    fn jacobians(
        &mut self,
        round: usize,
        w: &DMatrix<f64>,
        _obs: &DMatrix<f64>,
    ) -> Result<Option<JacobianBatch>> {
        let Some(b) = self.oracle.marginal(w)? else {
            return Ok(None);
        };
        let (m_isqrt, m_sqrt) = whitening(&b)?;
        let white = b.congruence(&m_isqrt, Space::Observed)?;
        let noisy = perturb_jacobians(&white, self.ser, rng::derive(self.seed, round as u64))?;
        Ok(Some(noisy.congruence(&m_sqrt, Space::Observed)?))
    }

    fn origin(&self) -> BatchOrigin {
        BatchOrigin::Perturbed
    }
}

/// Kernel Stein estimates, re-fitted on every round's observations.
#[derive(Debug, Clone, Default)]
pub struct SteinSource {
    pub cfg: SteinConfig,
}

impl JacobianSource for SteinSource {
    fn jacobians(
        &mut self,
        _round: usize,
        _w: &DMatrix<f64>,
        obs: &DMatrix<f64>,
    ) -> Result<Option<JacobianBatch>> {
        Ok(Some(stein_jacobian(obs, &self.cfg)?))
    }

    fn origin(&self) -> BatchOrigin {
        BatchOrigin::Estimated
    }
}

/// One precomputed batch of observed-space Jacobians (d×d), used in round 0
/// only.
#[derive(Debug, Clone)]
pub struct FixedSource {
    pub batch: JacobianBatch,
}

impl JacobianSource for FixedSource {
    fn jacobians(
        &mut self,
        round: usize,
        w: &DMatrix<f64>,
        obs: &DMatrix<f64>,
    ) -> Result<Option<JacobianBatch>> {
        if round > 0 {
            return Ok(None);
        }
        if self.batch.dim() != w.ncols() || self.batch.len() != obs.nrows() {
            return Err(Error::Dimension(format!(
                "external batch is {}×{}², data need {}×{}²",
                self.batch.len(),
                self.batch.dim(),
                obs.nrows(),
                w.ncols()
            )));
        }
        // W has orthonormal rows in round 0, so x = Wᵀ obs on the data span.
        Ok(Some(self.batch.congruence(&w.transpose(), Space::Observed)?))
    }

    fn origin(&self) -> BatchOrigin {
        BatchOrigin::External
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub solver: SolverConfig,
    /// Zero-variance threshold on whitened Jacobian diagonals (exact mode).
    pub var_tol: f64,
    /// Record per-restart solver traces.
    pub trace: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), var_tol: 1e-8, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Complete,
    /// A round found nothing; the remaining coordinates were lumped into it.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Observation dimension at the start of the round.
    pub dim: usize,
    pub origin: BatchOrigin,
    /// Feasibility tolerance used by the solver.
    pub tol: f64,
    /// Calibrated minimum feasibility level (auto-tolerance mode).
    pub t_star: Option<f64>,
    /// Matrices removed by outlier pruning before the search.
    pub pruned: usize,
    pub found: usize,
    pub filled: usize,
    /// Variance of each diagonal entry of the pulled-back Jacobians.
    pub variances: Vec<f64>,
    /// Indices (columns of Ĥ) emitted in this round.
    pub emitted: Vec<usize>,
    /// Remaining coordinates lumped in after a stall.
    pub lumped: bool,
}

/// Linear maps of one round: obs = X Wᵀ after whitening, and Ĥ in those
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTransform {
    pub w: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub solver_found: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub round: usize,
    pub column: usize,
    #[serde(flatten)]
    pub entry: TraceEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    /// N×k recovered coordinates in emission order.
    pub z_hat: DMatrix<f64>,
    /// k×d: row i is the functional of X giving coordinate i.
    pub functionals: DMatrix<f64>,
    /// Layer (round) of each coordinate.
    pub layer_of: Vec<usize>,
    pub rounds: Vec<RoundLog>,
    pub history: Vec<RoundTransform>,
    pub trace: Vec<SolverTrace>,
    pub status: RecoveryStatus,
}

impl RecoveryResult {
    pub fn num_layers(&self) -> usize {
        self.layer_of.iter().max().map_or(0, |m| m + 1)
    }

    pub fn layer_members(&self, layer: usize) -> Vec<usize> {
        (0..self.layer_of.len()).filter(|&i| self.layer_of[i] == layer).collect()
    }
}

/// Initial map: identity when d = n, otherwise the top-n right singular
/// vectors of X (exact span of noise-free linear mixtures).
fn initial_map(x: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let d = x.ncols();
    if d == n {
        return DMatrix::identity(n, n);
    }
    let eig = SymmetricEigen::new(x.transpose() * x);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    DMatrix::from_fn(n, d, |i, j| eig.eigenvectors[(j, idx[i])])
}

/// M^{-½} and M^{½} for M = −J̄, eigenvalues clamped away from zero in modulus.
pub fn whitening(batch: &JacobianBatch) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = -batch.mean()?;
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::Degenerate("mean Jacobian is zero or non-finite".into()));
    }
    let floor = 1e-12 * top;
    let clamp = move |l: f64| l.abs().max(floor);
    Ok((sym_apply(&m, move |l| clamp(l).powf(-0.5)), sym_apply(&m, move |l| clamp(l).sqrt())))
}

struct Search {
    found: Vec<DVector<f64>>,
    tol: f64,
    t_star: Option<f64>,
    pruned: usize,
}

fn search_columns(
    batch: &JacobianBatch,
    cfg: &RecoveryConfig,
    solver: &SolverConfig,
    round: usize,
    trace: &mut Vec<SolverTrace>,
) -> Result<Search> {
    let k = batch.dim();
    let (target, tol, t_star, pruned) = if solver.auto_tol {
        let p = prune_outliers(batch, solver.prune_fraction)?;
        let t = min_feasibility_level(&p, &[], solver)?;
        let dropped = batch.len() - p.len();
        (p, t + 0.001, Some(t), dropped)
    } else {
        (batch.clone(), solver.tol, None, 0)
    };
    let scfg = SolverConfig { tol, ..*solver };
    let mut found: Vec<DVector<f64>> = Vec::new();
    while found.len() < k {
        let mut entries = Vec::new();
        let res = find_null_direction_traced(
            &target,
            &found,
            &scfg,
            cfg.trace.then_some(&mut entries),
        )?;
        let column = found.len();
        trace.extend(entries.into_iter().map(|entry| SolverTrace { round, column, entry }));
        match res.h {
            Some(h) if res.feasible => found.push(h),
            _ => break,
        }
    }
    Ok(Search { found, tol, t_star, pruned })
}

/// Orthonormal k×k matrix whose first columns are `found`, completed with
/// seeded random directions.
fn complete_basis(found: &[DVector<f64>], k: usize, seed: u64) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = found.to_vec();
    let mut r = rng::stream(seed, rng::FILL);
    while cols.len() < k {
        let mut v = random_unit(&mut r, k);
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let nrm = v.norm();
        if nrm > 1e-8 {
            cols.push(v / nrm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Recovers n latent coordinates from X (N×d) layer by layer.
///
/// In exact mode (`auto_tol` off) a coordinate is emitted when its pulled-back
/// diagonal variance is at most `var_tol`; a round without emissions ends in
/// [`Error::Stalled`] whose partial result lumps the rest into that round. In
/// auto-tolerance mode coordinates are emitted iff the solver found them, and
/// stalls return `Ok` with [`RecoveryStatus::Partial`].
pub fn recover_latents(
    x: &DMatrix<f64>,
    n: usize,
    source: &mut dyn JacobianSource,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    cfg.solver.validate()?;
    let d = x.ncols();
    if n == 0 || n > d {
        return Err(Error::Dimension(format!("cannot recover {n} latents from {d} observations")));
    }
    if x.nrows() < 2 {
        return Err(Error::Degenerate("recovery needs at least two samples".into()));
    }
    let mut w = initial_map(x, n);
    let mut functionals: Vec<DVector<f64>> = Vec::new();
    let mut layer_of = Vec::new();
    let mut rounds = Vec::new();
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut carried: Option<JacobianBatch> = None;
    let mut status = RecoveryStatus::Complete;
    let mut round = 0;
    while w.nrows() > 0 {
        let k = w.nrows();
        let obs = x * w.transpose();
        let (batch, origin) = match source.jacobians(round, &w, &obs)? {
            Some(b) => (b, source.origin()),
            None => match carried.take() {
                Some(b) => (b, BatchOrigin::PullBack),
                None => {
                    return Err(Error::Structure(format!(
                        "no Jacobians available in round {round}"
                    )))
                }
            },
        };
        if batch.dim() != k {
            return Err(Error::Dimension(format!(
                "round {round}: Jacobians are {}×{0}, observations {k}-dimensional",
                batch.dim()
            )));
        }
        let batch = if batch.is_centered() { batch } else { batch.center()? };
        let (m_isqrt, m_sqrt) = whitening(&batch)?;
        let white = batch.congruence(&m_isqrt, Space::EstimatedLatent)?;
        w = m_sqrt * w;

        let solver = SolverConfig { seed: rng::derive(cfg.solver.seed, round as u64), ..cfg.solver };
        let search = search_columns(&white, cfg, &solver, round, &mut trace)?;
        let found = search.found.len();
        let h_hat = complete_basis(&search.found, k, solver.seed);
        let pulled = pull_back(&white, &h_hat)?;
        let variances = diag_variance(&pulled)?;
        let mut emitted: Vec<usize> = (0..k)
            .filter(|&i| if solver.auto_tol { i < found } else { variances[i] <= cfg.var_tol })
            .collect();
        let lumped = emitted.is_empty();
        if lumped {
            status = RecoveryStatus::Partial;
            emitted = (0..k).collect();
        }
        for &i in &emitted {
            functionals.push((h_hat.column(i).transpose() * &w).transpose());
            layer_of.push(round);
        }
        let keep: Vec<usize> = (0..k).filter(|i| !emitted.contains(i)).collect();
        rounds.push(RoundLog {
            round,
            dim: k,
            origin,
            tol: search.tol,
            t_star: search.t_star,
            pruned: search.pruned,
            found,
            filled: k - found,
            variances: variances.iter().copied().collect(),
            emitted,
            lumped,
        });
        history.push(RoundTransform {
            w: w.clone(),
            h_hat: h_hat.clone(),
            solver_found: (0..k).map(|i| i < found).collect(),
        });
        let h_keep = h_hat.select_columns(keep.iter());
        if !keep.is_empty() {
            carried = Some(pull_back(&white, &h_keep)?);
        }
        w = h_keep.transpose() * &w;
        round += 1;
    }
    let functionals = DMatrix::from_rows(
        &functionals.iter().map(|f| f.transpose()).collect::<Vec<_>>(),
    );
    let z_hat = x * functionals.transpose();
    let result = RecoveryResult { z_hat, functionals, layer_of, rounds, history, trace, status };
    if status == RecoveryStatus::Partial && !cfg.solver.auto_tol {
        let round = result.rounds.iter().find(|r| r.lumped).map_or(0, |r| r.round);
        return Err(Error::Stalled { round, partial: Box::new(result) });
    }
    Ok(result)
}

/// Recovery from one observed-space batch (d×d per sample). Later rounds use
/// pulled-back Jacobians.
pub fn recover_latents_from_batch(
    batch: &JacobianBatch,
    x: &DMatrix<f64>,
    n: usize,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    let mut source = FixedSource { batch: batch.clone() };
    recover_latents(x, n, &mut source, cfg)
}

/// Loadings of recovered coordinates on the true latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    /// Row i: loadings of coordinate i on the true latents (functionals · H).
    pub beta: Vec<Vec<f64>>,
    /// Rows of `beta` divided by their largest magnitude.
    pub normalized: Vec<Vec<f64>>,
    /// Recovered layer of each coordinate.
    pub layer_of: Vec<usize>,
    /// Largest normalized loading on true latents in lower layers than the
    /// coordinate's own.
    pub max_violation: Vec<f64>,
    pub threshold: f64,
    pub passed: bool,
}

/// Checks that every layer-k coordinate loads only on true latents in layers
/// ≥ k, up to `threshold` after row normalization.
pub fn check_upstream_structure(
    result: &RecoveryResult,
    h: &DMatrix<f64>,
    true_layers: &[usize],
    threshold: f64,
) -> Result<BetaReport> {
    beta_report(&result.functionals, &result.layer_of, h, true_layers, threshold)
}

/// [`check_upstream_structure`] from the functionals (k×d) and recovered
/// layers alone.
pub fn beta_report(
    functionals: &DMatrix<f64>,
    layer_of: &[usize],
    h: &DMatrix<f64>,
    true_layers: &[usize],
    threshold: f64,
) -> Result<BetaReport> {
    if h.nrows() != functionals.ncols() {
        return Err(Error::MissingGroundTruth(format!(
            "mixing has {} rows, functionals act on {} observations",
            h.nrows(),
            functionals.ncols()
        )));
    }
    if true_layers.len() != h.ncols() {
        return Err(Error::MissingGroundTruth("one true layer per latent is required".into()));
    }
    if layer_of.len() != functionals.nrows() {
        return Err(Error::Dimension("one recovered layer per functional is required".into()));
    }
    let beta = functionals * h;
    let mut normalized = Vec::with_capacity(beta.nrows());
    let mut max_violation = Vec::with_capacity(beta.nrows());
    for (i, row) in beta.row_iter().enumerate() {
        let scale = row.amax();
        let norm: Vec<f64> = row.iter().map(|v| if scale > 0.0 { v / scale } else { 0.0 }).collect();
        let k = layer_of[i];
        let worst = (0..norm.len())
            .filter(|&j| true_layers[j] < k)
            .map(|j| norm[j].abs())
            .fold(0.0, f64::max);
        normalized.push(norm);
        max_violation.push(worst);
    }
    let passed = max_violation.iter().all(|&v| v <= threshold);
    Ok(BetaReport {
        beta: beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
        normalized,
        layer_of: layer_of.to_vec(),
        max_violation,
        threshold,
        passed,
    })
}

/// Regressors used for each layer's noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorInputs {
    /// Recovered coordinates of all higher layers.
    UpstreamLatents,
    /// Noise estimates of all higher layers.
    UpstreamNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    pub ridge: Option<f64>,
    pub bandwidth: Option<f64>,
    pub poly: bool,
    pub inputs: RegressorInputs,
    pub max_select_rows: usize,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        let k = KrrConfig::default();
        Self {
            ridge: k.ridge,
            bandwidth: k.bandwidth,
            poly: k.poly,
            inputs: RegressorInputs::UpstreamLatents,
            max_select_rows: k.max_select_rows,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub layer: usize,
    pub targets: Vec<usize>,
    pub inputs: Vec<usize>,
    pub ridge: f64,
    pub bandwidth: f64,
    pub loo_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResult {
    /// N×k noise estimates, columns aligned with the recovered coordinates.
    pub e_hat: DMatrix<f64>,
    pub layer_of: Vec<usize>,
    pub models: Vec<RegressionModel>,
}

/// Noise estimates for every recovered coordinate, highest layer first.
pub fn recover_noise(result: &RecoveryResult, cfg: &RegressionConfig) -> Result<NoiseResult> {
    let layers = result.num_layers();
    if layers == 0 {
        return Err(Error::Structure("no recovered coordinates".into()));
    }
    let z = &result.z_hat;
    let mut e_hat = z.clone();
    let mut models = Vec::new();
    for layer in (0..layers - 1).rev() {
        let targets = result.layer_members(layer);
        if targets.is_empty() {
            continue;
        }
        let inputs: Vec<usize> =
            (0..result.layer_of.len()).filter(|&i| result.layer_of[i] > layer).collect();
        let x = match cfg.inputs {
            RegressorInputs::UpstreamLatents => z.select_columns(inputs.iter()),
            RegressorInputs::UpstreamNoise => e_hat.select_columns(inputs.iter()),
        };
        let y = z.select_columns(targets.iter());
        let kcfg = KrrConfig {
            ridge: cfg.ridge,
            bandwidth: cfg.bandwidth,
            poly: cfg.poly,
            max_select_rows: cfg.max_select_rows,
            seed: rng::derive(cfg.seed, layer as u64),
        };
        let fit = krr::fit(&x, &y, &kcfg)?;
        for (c, &t) in targets.iter().enumerate() {
            e_hat.set_column(t, &fit.residuals.column(c));
        }
        models.push(RegressionModel {
            layer,
            targets,
            inputs,
            ridge: fit.ridge,
            bandwidth: fit.bandwidth,
            loo_mse: fit.loo_mse,
        });
    }
    Ok(NoiseResult { e_hat, layer_of: result.layer_of.clone(), models })
}

impl From<Source> for BatchOrigin {
    fn from(s: Source) -> Self {
        match s {
            Source::Oracle => BatchOrigin::Oracle,
            Source::Estimated => BatchOrigin::Estimated,
            Source::Perturbed => BatchOrigin::Perturbed,
            Source::External => BatchOrigin::External,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Dag;
    use crate::oracle::{latent_to_observed, oracle_batch};
    use crate::synth::{mix, MixingMatrix, SampleBatch};

    fn dataset(dag: Dag, n_samples: usize, seed: u64) -> Dataset {
        let vars = crate::synth::sample_noise_variances(dag.n(), seed);
        let scm = Scm::squared_norm(dag, vars).unwrap();
        Dataset::generate(&scm, n_samples, scm.n(), seed).unwrap()
    }

    #[test]
    fn edgeless_identity_mixing_emits_everything_in_round_zero() {
        let scm = Scm::squared_norm(Dag::edgeless(2), vec![0.3, 0.8]).unwrap();
        let (e, z) = crate::synth::sample_scm(&scm, 500, 1).unwrap();
        let b = mix(&SampleBatch::new(e.clone(), z.clone()).unwrap(), &MixingMatrix::identity(2))
            .unwrap();
        let mut src = OracleSource::new(scm, z.clone(), e, DMatrix::identity(2, 2)).unwrap();
        let r = recover_latents(&b.x, 2, &mut src, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.layer_of, vec![0, 0]);
        assert_eq!(r.status, RecoveryStatus::Complete);
        // Gaussian roots without edges are identifiable only up to a rotation
        // of the whitened layer, so check that Ẑ is an exact linear image of Z.
        let beta = &r.functionals * DMatrix::<f64>::identity(2, 2);
        assert!((&z * beta.transpose() - &r.z_hat).amax() < 1e-12);
        assert!(beta.determinant().abs() > 1e-6);
        let noise = recover_noise(&r, &RegressionConfig::default()).unwrap();
        assert_eq!(noise.e_hat, r.z_hat);
        assert!(noise.models.is_empty());
    }

    #[test]
    fn line_graph_peels_one_layer_per_round() {
        let data = dataset(Dag::line(4), 600, 3);
        let mut src = OracleSource::from_dataset(&data).unwrap();
        let r = recover_latents(&data.batch.x, 4, &mut src, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.layer_of, vec![0, 1, 2, 3]);
        assert!(r.rounds.iter().all(|l| l.origin == BatchOrigin::Oracle));
        let rep = check_upstream_structure(&r, data.mixing.h(), &[3, 2, 1, 0], 0.05).unwrap();
        assert!(rep.passed, "{:?}", rep.max_violation);
        // composing functionals with H is the β used by the diagnostic
        let beta = &r.functionals * data.mixing.h();
        let z_from_beta = &data.batch.z * beta.transpose();
        assert!((z_from_beta - &r.z_hat).amax() < 1e-8 * r.z_hat.amax());
    }

    #[test]
    fn fixed_batch_round_zero_counts_leaves() {
        let data = dataset(Dag::y_structure(), 500, 4);
        let lat = oracle_batch(&data.scaled_scm, &data.batch.z).unwrap();
        let obs = latent_to_observed(&lat, &data.mixing).unwrap();
        let r = recover_latents_from_batch(&obs, &data.batch.x, 4, &RecoveryConfig::default());
        let r = match r {
            Ok(r) => r,
            Err(Error::Stalled { partial, .. }) => *partial,
            Err(e) => panic!("{e}"),
        };
        assert_eq!(r.rounds[0].emitted.len(), 2);
        assert_eq!(r.rounds[0].origin, BatchOrigin::External);
    }

    #[test]
    fn tall_mixing_is_reduced_first() {
        let vars = crate::synth::sample_noise_variances(3, 5);
        let scm = Scm::squared_norm(Dag::line(3), vars).unwrap();
        let data = Dataset::generate(&scm, 400, 5, 5).unwrap();
        let mut src = OracleSource::from_dataset(&data).unwrap();
        let r = recover_latents(&data.batch.x, 3, &mut src, &RecoveryConfig::default()).unwrap();
        assert_eq!(r.layer_of, vec![0, 1, 2]);
        assert_eq!(r.functionals.shape(), (3, 5));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let mut src = SteinSource::default();
        assert!(recover_latents(&x, 3, &mut src, &RecoveryConfig::default()).is_err());
        assert!(recover_latents(&x, 0, &mut src, &RecoveryConfig::default()).is_err());
    }
}
