//! Unit directions annihilating a batch of centered Jacobians in quadratic form.
//!
//! Feasibility of `hᵀ J̃⁽ᵐ⁾ h = 0 ∀m, ‖h‖ = 1, h ⊥ ortho` is attacked by
//! minimizing F(u) = (1/N) Σₘ (uᵀ Bₘ u)² on the unit sphere, where
//! Bₘ = Qᵀ J̃⁽ᵐ⁾ Q and Q spans the complement of `ortho`, so h = Q u satisfies
//! the orthogonality constraints exactly. Each seeded restart runs projected
//! gradient descent with Armijo backtracking, then a Levenberg–Marquardt polish
//! on the residual vector qₘ = uᵀ Bₘ u. Restarts still above tolerance are
//! pushed toward the minimax point maxₘ |qₘ| through smoothed L_2k norms, the
//! quantity feasibility is judged by.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, frobenius_sq, random_unit};
use crate::oracle::JacobianBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub initial: f64,
    /// Step multiplier after an accepted iteration.
    pub grow: f64,
    /// Backtracking factor.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self { initial: 1.0, grow: 2.0, shrink: 0.5, armijo: 1e-4, min_step: 1e-20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub restarts: usize,
    pub max_iters: usize,
    pub step: StepRule,
    pub prune_fraction: f64,
    pub auto_tol: bool,
    /// Levenberg–Marquardt iterations after the gradient phase.
    pub polish_iters: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            restarts: 32,
            max_iters: 500,
            step: StepRule::default(),
            prune_fraction: 0.25,
            auto_tol: false,
            polish_iters: 100,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("solver needs at least one restart".into()));
        }
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(Error::Config("prune fraction must lie in [0, 1)".into()));
        }
        let s = &self.step;
        if !(s.initial > 0.0 && s.grow >= 1.0 && s.shrink > 0.0 && s.shrink < 1.0 && s.armijo > 0.0) {
            return Err(Error::Config("invalid step rule".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullDirectionResult {
    /// Unit d-vector; absent only if every restart produced non-finite values.
    pub h: Option<DVector<f64>>,
    /// max_m |hᵀ J̃⁽ᵐ⁾ h|.
    pub residual: f64,
    /// (1/N) Σ (hᵀ J̃⁽ᵐ⁾ h)².
    pub objective: f64,
    pub feasible: bool,
    /// Index of the restart that produced `h`.
    pub restart: usize,
}

/// Per-restart summary, dumped as JSON lines on request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub restart: usize,
    pub iterations: usize,
    pub objective: f64,
    pub residual: f64,
}

/// Batch reduced to the complement of the orthogonality constraints, stored
/// contiguously (N blocks of p×p, column-major).
struct Reduced {
    q: DMatrix<f64>,
    p: usize,
    data: Vec<f64>,
    count: usize,
}

impl Reduced {
    fn new(batch: &JacobianBatch, ortho: &[DVector<f64>]) -> Result<Self> {
        let centered = batch.centered()?;
        let q = complement_basis(ortho, batch.dim())?;
        let p = q.ncols();
        let qt = q.transpose();
        let mut data = Vec::with_capacity(centered.len() * p * p);
        for m in centered {
            data.extend_from_slice((&qt * m * &q).as_slice());
        }
        Ok(Self { q, p, data, count: centered.len() })
    }

    fn block(&self, m: usize) -> &[f64] {
        &self.data[m * self.p * self.p..(m + 1) * self.p * self.p]
    }

    /// B u for block m into `out`.
    fn apply(&self, m: usize, u: &[f64], out: &mut [f64]) {
        let p = self.p;
        let b = self.block(m);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, &uj) in u.iter().enumerate() {
            let col = &b[j * p..(j + 1) * p];
            for i in 0..p {
                out[i] += col[i] * uj;
            }
        }
    }

    fn forms(&self, u: &[f64]) -> Vec<f64> {
        let mut bu = vec![0.0; self.p];
        (0..self.count)
            .map(|m| {
                self.apply(m, u, &mut bu);
                bu.iter().zip(u).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn objective(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let q = self.forms(u);
        let f = q.iter().map(|v| v * v).sum::<f64>() / self.count as f64;
        (f, q)
    }

    /// Euclidean gradient (4/N) Σ qₘ Bₘ u.
    fn gradient(&self, u: &[f64], q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.p];
        let mut bu = vec![0.0; self.p];
        for (m, &qm) in q.iter().enumerate() {
            self.apply(m, u, &mut bu);
            for i in 0..self.p {
                g[i] += qm * bu[i];
            }
        }
        let s = 4.0 / self.count as f64;
        g.iter_mut().for_each(|v| *v *= s);
        g
    }
}

struct RestartOutcome {
    u: Vec<f64>,
    objective: f64,
    residual: f64,
    iterations: usize,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn max_abs(q: &[f64]) -> f64 {
    q.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn descend(red: &Reduced, mut u: Vec<f64>, cfg: &SolverConfig) -> RestartOutcome {
    let p = red.p;
    let (mut f, mut q) = red.objective(&u);
    let mut t = cfg.step.initial;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut g = red.gradient(&u, &q);
        let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        for i in 0..p {
            g[i] -= gu * u[i];
        }
        let gn: f64 = g.iter().map(|v| v * v).sum();
        if gn < 1e-30 {
            break;
        }
        t *= cfg.step.grow;
        let (mut un, mut fnew, mut qn);
        loop {
            un = u.iter().zip(&g).map(|(a, b)| a - t * b).collect::<Vec<_>>();
            normalize(&mut un);
            (fnew, qn) = red.objective(&un);
            if fnew <= f - cfg.step.armijo * t * gn || t < cfg.step.min_step {
                break;
            }
            t *= cfg.step.shrink;
        }
        if !(fnew < f) {
            break;
        }
        let rel = (f - fnew) / f.max(1e-300);
        u = un;
        f = fnew;
        q = qn;
        if rel < 1e-10 {
            break;
        }
    }
    if p > 1 && f > 0.0 {
        let (up, fp, qp, it) = polish(red, u, f, q, cfg.polish_iters);
        u = up;
        f = fp;
        q = qp;
        iterations += it;
    }
    RestartOutcome { residual: max_abs(&q), u, objective: f, iterations }
}

/// Levenberg–Marquardt on r(u) = (uᵀBₘu)ₘ restricted to the tangent space;
/// the uuᵀ term makes the normal equations nonsingular along u.
fn polish(
    red: &Reduced,
    mut u: Vec<f64>,
    mut f: f64,
    mut q: Vec<f64>,
    iters: usize,
) -> (Vec<f64>, f64, Vec<f64>, usize) {
    let p = red.p;
    let mut mu = {
        let mean_abs = red.data.iter().map(|v| v.abs()).sum::<f64>() / red.data.len().max(1) as f64;
        1e-3 * mean_abs + 1e-300
    };
    let mut bu = vec![0.0; p];
    let mut done = 0;
    for _ in 0..iters {
        done += 1;
        let uv = DVector::from_column_slice(&u);
        let proj = DMatrix::identity(p, p) - &uv * uv.transpose();
        let mut jtj = DMatrix::zeros(p, p);
        let mut jtr = DVector::zeros(p);
        for (m, &qm) in q.iter().enumerate() {
            red.apply(m, &u, &mut bu);
            let row = &proj * DVector::from_iterator(p, bu.iter().map(|v| 2.0 * v));
            jtj.ger(1.0, &row, &row, 1.0);
            jtr.axpy(qm, &row, 1.0);
        }
        let rhs = -jtr;
        let floor = 1e-14 * jtj.trace() + 1e-300;
        let mut improved = false;
        for _ in 0..20 {
            mu = mu.max(floor);
            let sys = &jtj + DMatrix::identity(p, p) * mu + &uv * uv.transpose();
            let Some(delta) = sys.cholesky().map(|c| c.solve(&rhs)) else {
                mu *= 4.0;
                continue;
            };
            let mut un: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            normalize(&mut un);
            let (fnew, qn) = red.objective(&un);
            if fnew < f {
                u = un;
                f = fnew;
                q = qn;
                mu /= 3.0;
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved || f < 1e-30 {
            break;
        }
    }
    (u, f, q, done)
}

/// Pushes a surrogate minimizer toward the minimax point by minimizing
/// Σ (qₘ/s)^(2k) for k = 2, 4, …, 32 (an L_2k norm approaching max |qₘ|).
/// Returns the iterate with the smallest max-residual seen, and that residual.
fn minimax_refine(red: &Reduced, mut u: Vec<f64>, cfg: &SolverConfig) -> (Vec<f64>, f64) {
    let p = red.p;
    let mut best = max_abs(&red.forms(&u));
    let mut best_u = u.clone();
    let mut bu = vec![0.0; p];
    for k in [2i32, 4, 8, 16, 32] {
        let e = 2 * k;
        let scale = max_abs(&red.forms(&u)).max(1e-300);
        let value = |q: &[f64]| q.iter().map(|v| (v / scale).powi(e)).sum::<f64>();
        let mut q = red.forms(&u);
        let mut f = value(&q);
        let mut t = cfg.step.initial;
        for _ in 0..cfg.max_iters.min(200) {
            let mut g = vec![0.0; p];
            for (m, &qm) in q.iter().enumerate() {
                red.apply(m, &u, &mut bu);
                let w = 2.0 * e as f64 * (qm / scale).powi(e - 1) / scale;
                for i in 0..p {
                    g[i] += w * bu[i];
                }
            }
            let gu: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            for i in 0..p {
                g[i] -= gu * u[i];
            }
            let gn: f64 = g.iter().map(|v| v * v).sum();
            if gn < 1e-30 {
                break;
            }
            t *= cfg.step.grow;
            let (mut un, mut qn, mut fnew);
            loop {
                un = u.iter().zip(&g).map(|(a, b)| a - t * b).collect::<Vec<_>>();
                normalize(&mut un);
                qn = red.forms(&un);
                fnew = value(&qn);
                if fnew <= f - cfg.step.armijo * t * gn || t < cfg.step.min_step {
                    break;
                }
                t *= cfg.step.shrink;
            }
            if !(fnew < f) {
                break;
            }
            let rel = (f - fnew) / f.max(1e-300);
            u = un;
            q = qn;
            f = fnew;
            let r = max_abs(&q);
            if r < best {
                best = r;
                best_u.clone_from(&u);
            }
            if rel < 1e-10 {
                break;
            }
        }
    }
    (best_u, best)
}

/// Runs every seeded restart. Restarts whose max-residual exceeds
/// `refine_above` are refined toward the minimax point.
fn run_restarts(
    batch: &JacobianBatch,
    ortho: &[DVector<f64>],
    cfg: &SolverConfig,
    refine_above: f64,
) -> Result<(Reduced, Vec<RestartOutcome>)> {
    cfg.validate()?;
    let red = Reduced::new(batch, ortho)?;
    let outcomes = (0..cfg.restarts)
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let u0 = random_unit(&mut rng, red.p);
            let mut o = descend(&red, u0.as_slice().to_vec(), cfg);
            if red.p > 1 && o.residual.is_finite() && o.residual > refine_above {
                let (u, residual) = minimax_refine(&red, o.u.clone(), cfg);
                if residual < o.residual {
                    o.objective = red.objective(&u).0;
                    o.u = u;
                    o.residual = residual;
                }
            }
            o
        })
        .collect();
    Ok((red, outcomes))
}

/// The search objective F(v) = (1/N) Σₘ (vᵀ J̃⁽ᵐ⁾ v)² at a d-vector `v`.
pub fn objective_at(batch: &JacobianBatch, v: &DVector<f64>) -> Result<f64> {
    if v.len() != batch.dim() {
        return Err(Error::Dimension(format!("vector of length {} for {}×{} Jacobians", v.len(), batch.dim(), batch.dim())));
    }
    let red = Reduced::new(batch, &[])?;
    let u = red.q.transpose() * v;
    Ok(red.objective(u.as_slice()).0)
}

/// Best unit h ⊥ ortho for the batch. Among restarts meeting `cfg.tol` the
/// lowest objective wins, otherwise the lowest objective overall; ties go to
/// the earlier restart.
pub fn find_null_direction(
    batch: &JacobianBatch,
    ortho: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<NullDirectionResult> {
    find_null_direction_traced(batch, ortho, cfg, None)
}

pub fn find_null_direction_traced(
    batch: &JacobianBatch,
    ortho: &[DVector<f64>],
    cfg: &SolverConfig,
    trace: Option<&mut Vec<TraceEntry>>,
) -> Result<NullDirectionResult> {
    let (red, outcomes) = run_restarts(batch, ortho, cfg, cfg.tol)?;
    if let Some(t) = trace {
        t.extend(outcomes.iter().enumerate().map(|(r, o)| TraceEntry {
            restart: r,
            iterations: o.iterations,
            objective: o.objective,
            residual: o.residual,
        }));
    }
    let finite = |o: &&RestartOutcome| o.objective.is_finite() && o.residual.is_finite();
    let pick = |feasible_only: bool| {
        outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| finite(o) && (!feasible_only || o.residual <= cfg.tol))
            .fold(None::<(usize, &RestartOutcome)>, |best, (r, o)| match best {
                Some((_, b)) if b.objective <= o.objective => best,
                _ => Some((r, o)),
            })
    };
    let Some((restart, best)) = pick(true).or_else(|| pick(false)) else {
        return Ok(NullDirectionResult {
            h: None,
            residual: f64::INFINITY,
            objective: f64::INFINITY,
            feasible: false,
            restart: 0,
        });
    };
    let h = &red.q * DVector::from_column_slice(&best.u);
    let h = &h / h.norm();
    Ok(NullDirectionResult {
        h: Some(h),
        residual: best.residual,
        objective: best.objective,
        feasible: best.residual <= cfg.tol,
        restart,
    })
}

/// Approximate t* = min over unit v ⊥ ortho of maxₘ |vᵀ J̃⁽ᵐ⁾ v|: every
/// restart's surrogate minimizer is refined toward the minimax point and the
/// smallest max-residual seen is reported.
pub fn min_feasibility_level(
    batch: &JacobianBatch,
    ortho: &[DVector<f64>],
    cfg: &SolverConfig,
) -> Result<f64> {
    let (_, outcomes) = run_restarts(batch, ortho, cfg, 0.0)?;
    Ok(outcomes
        .iter()
        .map(|o| o.residual)
        .filter(|r| r.is_finite())
        .fold(f64::INFINITY, f64::min))
}

/// Drops the ⌈fraction·N⌉ centered matrices with the largest Frobenius norm
/// and re-centers the rest.
pub fn prune_outliers(batch: &JacobianBatch, fraction: f64) -> Result<JacobianBatch> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config("prune fraction must lie in [0, 1)".into()));
    }
    let centered = batch.centered()?;
    let n = centered.len();
    let drop = (fraction * n as f64).ceil() as usize;
    if drop == 0 {
        return Ok(batch.clone());
    }
    if n - drop < 2 {
        return Err(Error::Degenerate(format!("pruning {drop} of {n} leaves fewer than two")));
    }
    let mut order: Vec<(f64, usize)> =
        centered.iter().enumerate().map(|(i, m)| (frobenius_sq(m), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = order[drop..].iter().map(|&(_, i)| i).collect();
    keep.sort_unstable();
    batch.select(&keep)
}

/// Lower bound on min over unit v of maxₘ |vᵀ J̃⁽ᵐ⁾ v| from a definite
/// combination: if Σ λₘ J̃⁽ᵐ⁾ ⪰ c·I with c > 0 then every unit v has
/// maxₘ |vᵀJ̃⁽ᵐ⁾v| ≥ c / ‖λ‖₁. The weights are improved by normalized
/// supergradient ascent on λ_min. Returns 0 when no definite combination
/// was found.
pub fn infeasibility_bound(batch: &JacobianBatch, iters: usize) -> Result<f64> {
    let mats = batch.centered()?;
    let n = mats.len();
    let d = batch.dim();
    let combo = |lam: &[f64]| {
        let mut s = DMatrix::zeros(d, d);
        for (l, m) in lam.iter().zip(mats) {
            s += m * *l;
        }
        s
    };
    let eval = |lam: &[f64]| -> (f64, DVector<f64>) {
        let eig = SymmetricEigen::new(combo(lam));
        let (k, &lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("d > 0");
        let l1: f64 = lam.iter().map(|v| v.abs()).sum();
        (lmin / l1, eig.eigenvectors.column(k).into_owned())
    };
    let mut best = 0.0f64;
    for sign in [1.0, -1.0] {
        // Start from the weights that maximize the trace of the combination.
        let mut lam: Vec<f64> = mats.iter().map(|m| sign * m.trace()).collect();
        if lam.iter().all(|v| *v == 0.0) {
            lam = vec![sign; n];
        }
        for it in 0..iters {
            let (val, v) = eval(&lam);
            best = best.max(val);
            let mut g: Vec<f64> = mats.iter().map(|m| (v.transpose() * m * &v)[(0, 0)]).collect();
            let l1: f64 = lam.iter().map(|x| x.abs()).sum();
            for (gi, li) in g.iter_mut().zip(&lam) {
                *gi -= val * li.signum();
            }
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn == 0.0 {
                break;
            }
            let step = l1 / (n as f64).sqrt() / (1.0 + it as f64).sqrt();
            for (li, gi) in lam.iter_mut().zip(&g) {
                *li += step * gi / gn;
            }
        }
    }
    Ok(best.max(0.0))
}
