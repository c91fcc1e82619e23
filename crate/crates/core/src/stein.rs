//! Kernel Stein estimates of scores and score Jacobians from samples alone.
//!
//! With an RBF kernel k(x, y) = exp(−‖x − y‖² / 2h²), Gram matrix K and
//! ⟨∇K⟩ₘ = Σₘ′ ∇_{x⁽ᵐ′⁾} k(x⁽ᵐ⁾, x⁽ᵐ′⁾):
//!
//! 1. scores at the samples: Ĝ = −(K + ηI)⁻¹ ⟨∇K⟩
//! 2. kernel interpolant of the scores: ŝ(x) = Σₘ αₘ k(x, x⁽ᵐ⁾), α = (K + ηI)⁻¹ Ĝ
//! 3. Jacobians by differentiating the interpolant: J(x) = Σₘ ∇ₓk(x, x⁽ᵐ⁾) αₘᵀ,
//!    then symmetrized.
//!
//! Both solves share one Cholesky factorization.

use faer::prelude::*;
use faer::{Mat, Side};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, frobenius_sq};
use crate::oracle::{JacobianBatch, Source, Space};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SteinConfig {
    /// RBF bandwidth; `None` selects the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// Ridge η; `None` uses 1e-3 · N.
    pub ridge: Option<f64>,
}

impl SteinConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config("Stein bandwidth must be positive".into()));
            }
        }
        if let Some(eta) = self.ridge {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::Config("Stein ridge must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Median of the N(N−1)/2 pairwise Euclidean distances between rows.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Degenerate("median bandwidth needs at least two rows".into()));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let t = x[(i, c)] - x[(j, c)];
                s += t * t;
            }
            d2.push(s);
        }
    }
    let len = d2.len();
    let mid = len / 2;
    let (_, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let h = if len % 2 == 1 {
        upper.sqrt()
    } else {
        let lower = d2[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper.sqrt())
    };
    if !(h > 0.0) {
        return Err(Error::Degenerate("median pairwise distance is zero".into()));
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct SteinEstimate {
    pub bandwidth: f64,
    pub ridge: f64,
    /// N×d score estimates at the samples.
    pub scores: DMatrix<f64>,
    /// Symmetrized Jacobian estimates.
    pub jacobians: JacobianBatch,
    /// Largest |J − Jᵀ| entry before symmetrization.
    pub asymmetry: f64,
}

struct Fitted {
    bandwidth: f64,
    ridge: f64,
    xc: Mat<f64>,
    k: Mat<f64>,
    llt: faer::linalg::solvers::Llt<f64>,
    g: Mat<f64>,
}

fn fit(x: &DMatrix<f64>, cfg: &SteinConfig) -> Result<Fitted> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Degenerate("Stein estimation needs at least two samples".into()));
    }
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => median_bandwidth(x)?,
    };
    let eta = cfg.ridge.unwrap_or(1e-3 * n as f64);
    // Centering is exact for a translation-invariant kernel and keeps the
    // x ⊙ (Kα) − K(x ⊙ α) differences well conditioned.
    let mu = column_means(x);
    let xc = Mat::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let inv2h2 = 1.0 / (2.0 * h * h);
    let mut k = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..d {
                let t = xc[(i, c)] - xc[(j, c)];
                s += t * t;
            }
            let v = (-s * inv2h2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    // ⟨∇K⟩ₘ = (1/h²) [x⁽ᵐ⁾ (K1)ₘ − (KX)ₘ]
    let kx = &k * &xc;
    let mut grad_k = Mat::<f64>::zeros(n, d);
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| k[(i, j)]).sum();
        for c in 0..d {
            grad_k[(i, c)] = (xc[(i, c)] * row_sum - kx[(i, c)]) / (h * h);
        }
    }
    let llt = {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += eta;
        }
        a.llt(Side::Lower)
            .map_err(|e| Error::Numeric(format!("regularized Gram matrix: {e:?}")))?
    };
    let mut g = llt.solve(&grad_k);
    for v in g.col_iter_mut() {
        for e in v.iter_mut() {
            *e = -*e;
        }
    }
    Ok(Fitted { bandwidth: h, ridge: eta, xc, k, llt, g })
}

fn to_dmatrix(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Score estimates ŝ(x⁽ᵐ⁾), N×d.
pub fn stein_score(x: &DMatrix<f64>, cfg: &SteinConfig) -> Result<DMatrix<f64>> {
    Ok(to_dmatrix(&fit(x, cfg)?.g))
}

/// Scores and per-sample Jacobian estimates (observed space, centered).
pub fn stein_estimate(x: &DMatrix<f64>, cfg: &SteinConfig) -> Result<SteinEstimate> {
    let f = fit(x, cfg)?;
    let (n, d) = (f.xc.nrows(), f.xc.ncols());
    let h2 = f.bandwidth * f.bandwidth;
    let alpha = f.llt.solve(&f.g);
    let k_alpha = &f.k * &alpha;
    let prod = Mat::from_fn(n, d * d, |m, c| f.xc[(m, c / d)] * alpha[(m, c % d)]);
    let k_prod = &f.k * &prod;
    let mut raw = Vec::with_capacity(n);
    let mut asymmetry: f64 = 0.0;
    for m in 0..n {
        let j = DMatrix::from_fn(d, d, |a, b| {
            -(f.xc[(m, a)] * k_alpha[(m, b)] - k_prod[(m, a * d + b)]) / h2
        });
        asymmetry = asymmetry.max((&j - j.transpose()).amax());
        raw.push(j);
    }
    let jacobians = JacobianBatch::centered_from(raw, Space::Observed, Source::Estimated)?;
    Ok(SteinEstimate {
        bandwidth: f.bandwidth,
        ridge: f.ridge,
        scores: to_dmatrix(&f.g),
        jacobians,
        asymmetry,
    })
}

pub fn stein_jacobian(x: &DMatrix<f64>, cfg: &SteinConfig) -> Result<JacobianBatch> {
    Ok(stein_estimate(x, cfg)?.jacobians)
}

/// Σ‖J_oracle‖²_F / Σ‖J_est − J_oracle‖²_F; +∞ when the two batches agree.
pub fn jacobian_ser(estimated: &JacobianBatch, oracle: &JacobianBatch) -> Result<f64> {
    if estimated.len() != oracle.len() || estimated.dim() != oracle.dim() {
        return Err(Error::Dimension("SER needs batches of equal size and dimension".into()));
    }
    let mut signal = 0.0;
    let mut error = 0.0;
    for (e, o) in estimated.raw().iter().zip(oracle.raw()) {
        signal += frobenius_sq(o);
        error += frobenius_sq(&(e - o));
    }
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(signal / error)
}
