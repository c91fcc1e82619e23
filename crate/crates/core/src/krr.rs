//! Kernel ridge regression used to strip upstream dependence from recovered
//! coordinates.
//!
//! Inputs are standardized per column. The kernel is an RBF with median
//! bandwidth, optionally plus the quadratic polynomial kernel (1 + xᵀy)². When
//! no ridge is given, λ is chosen by closed-form leave-one-out error from one
//! eigendecomposition of the Gram matrix.

use faer::prelude::*;
use faer::{Mat, Side};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, column_stds};
use crate::rng;
use crate::stein::median_bandwidth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrrConfig {
    /// Fixed ridge λ; `None` selects it by leave-one-out over [`ridge_grid`].
    pub ridge: Option<f64>,
    /// RBF bandwidth in standardized units; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    /// Add the (1 + xᵀy)² kernel to the RBF.
    pub poly: bool,
    /// Above this many rows λ and the bandwidth are chosen on a random subsample.
    pub max_select_rows: usize,
    pub seed: u64,
}

impl Default for KrrConfig {
    fn default() -> Self {
        Self { ridge: None, bandwidth: None, poly: true, max_select_rows: 2000, seed: 0 }
    }
}

impl KrrConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.ridge {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config("regression ridge must be positive".into()));
            }
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config("regression bandwidth must be positive".into()));
            }
        }
        if self.max_select_rows < 2 {
            return Err(Error::Config("max_select_rows must be at least 2".into()));
        }
        Ok(())
    }
}

/// 10⁻⁴ … 10³ in half decades.
pub fn ridge_grid() -> Vec<f64> {
    (0..15).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrFit {
    pub ridge: f64,
    pub bandwidth: f64,
    /// Mean squared leave-one-out error at the chosen ridge (selection rows only).
    pub loo_mse: Option<f64>,
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
}

/// Columns scaled to zero mean and unit variance; constant columns become zero.
pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mu = column_means(x);
    let sd = column_stds(x);
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if sd[j] > 0.0 {
            (x[(i, j)] - mu[j]) / sd[j]
        } else {
            0.0
        }
    })
}

fn gram(x: &DMatrix<f64>, bandwidth: f64, poly: bool) -> Mat<f64> {
    let n = x.nrows();
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut k = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (mut d2, mut dot) = (0.0, 0.0);
            for c in 0..x.ncols() {
                let (a, b) = (x[(i, c)], x[(j, c)]);
                d2 += (a - b) * (a - b);
                dot += a * b;
            }
            let mut v = (-d2 * inv2h2).exp();
            if poly {
                v += (1.0 + dot) * (1.0 + dot);
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn to_mat(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn to_dmatrix(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Leave-one-out selection over `grid`. Returns (λ, LOO MSE, in-sample fit at λ).
fn loo_select(k: &Mat<f64>, y: &Mat<f64>, grid: &[f64]) -> Result<(f64, f64, Mat<f64>)> {
    let n = k.nrows();
    let eig = k
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("Gram eigendecomposition: {e:?}")))?;
    let v = eig.U();
    let lam: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i].max(0.0)).collect();
    let vty = v.transpose() * y;
    let v2: Vec<f64> = (0..n * n).map(|idx| v[(idx % n, idx / n)].powi(2)).collect();
    let mut best: Option<(f64, f64, Mat<f64>)> = None;
    for &l in grid {
        let s: Vec<f64> = lam.iter().map(|&e| e / (e + l)).collect();
        let scaled = Mat::from_fn(n, y.ncols(), |j, c| s[j] * vty[(j, c)]);
        let yhat = v * &scaled;
        let mut err = 0.0;
        for i in 0..n {
            let sii: f64 = (0..n).map(|j| v2[j * n + i] * s[j]).sum();
            let denom = (1.0 - sii).max(1e-12);
            for c in 0..y.ncols() {
                err += ((y[(i, c)] - yhat[(i, c)]) / denom).powi(2);
            }
        }
        let mse = err / (n * y.ncols()) as f64;
        if best.as_ref().is_none_or(|b| mse < b.1) {
            best = Some((l, mse, yhat));
        }
    }
    Ok(best.expect("non-empty grid"))
}

fn cholesky_fit(k: &Mat<f64>, y: &Mat<f64>, ridge: f64) -> Result<Mat<f64>> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Numeric(format!("regularized Gram matrix: {e:?}")))?;
    Ok(k * llt.solve(y))
}

/// Regresses every column of `y` (N×q) on `x` (N×p) and returns in-sample fits
/// and residuals.
pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &KrrConfig) -> Result<KrrFit> {
    cfg.validate()?;
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Dimension("regression inputs and targets differ in rows".into()));
    }
    if n < 2 {
        return Err(Error::Degenerate("regression needs at least two rows".into()));
    }
    let xs = standardize(x);
    let sel_rows: Option<Vec<usize>> = (n > cfg.max_select_rows).then(|| {
        let mut r = rng::stream(cfg.seed, rng::SUBSAMPLE);
        let mut idx = sample(&mut r, n, cfg.max_select_rows).into_vec();
        idx.sort_unstable();
        idx
    });
    let sub_x = match &sel_rows {
        Some(idx) => xs.select_rows(idx.iter()),
        None => xs.clone(),
    };
    let bandwidth = match cfg.bandwidth {
        Some(h) => h,
        None => median_bandwidth(&sub_x)?,
    };
    let ym = to_mat(y);
    let (ridge, loo_mse, fitted) = match (cfg.ridge, &sel_rows) {
        (Some(l), _) => (l, None, cholesky_fit(&gram(&xs, bandwidth, cfg.poly), &ym, l)?),
        (None, None) => {
            let k = gram(&xs, bandwidth, cfg.poly);
            let (l, mse, yhat) = loo_select(&k, &ym, &ridge_grid())?;
            (l, Some(mse), yhat)
        }
        (None, Some(idx)) => {
            let ks = gram(&sub_x, bandwidth, cfg.poly);
            let ys = to_mat(&y.select_rows(idx.iter()));
            let (l, mse, _) = loo_select(&ks, &ys, &ridge_grid())?;
            // Keep the per-sample penalty comparable on the full data.
            let l = l * n as f64 / idx.len() as f64;
            (l, Some(mse), cholesky_fit(&gram(&xs, bandwidth, cfg.poly), &ym, l)?)
        }
    };
    let fitted = to_dmatrix(&fitted);
    let residuals = y - &fitted;
    Ok(KrrFit { ridge, bandwidth, loo_mse, fitted, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut r = rng::stream(seed, 0);
        let x = DMatrix::from_fn(n, 1, |_, _| r.random_range(-2.0f64..2.0));
        let noise = DMatrix::from_fn(n, 1, |_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| x[(i, 0)].sin() + x[(i, 0)].powi(2) + noise[(i, 0)]);
        (x, y, noise)
    }

    #[test]
    fn grid_spans_half_decades() {
        let g = ridge_grid();
        assert_eq!(g.len(), 15);
        assert!((g[0] - 1e-4).abs() < 1e-18);
        assert!((g[14] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn residuals_track_additive_noise() {
        let (x, y, noise) = data(400, 1);
        let f = fit(&x, &y, &KrrConfig::default()).unwrap();
        let err = (&f.residuals - &noise).norm() / noise.norm();
        assert!(err < 0.35, "relative residual error {err}");
        assert!((&f.fitted + &f.residuals - &y).amax() < 1e-12);
        assert!(f.loo_mse.unwrap() < 0.02);
    }

    #[test]
    fn loo_matches_explicit_refits() {
        let (x, y, _) = data(30, 2);
        let xs = standardize(&x);
        let h = median_bandwidth(&xs).unwrap();
        let lam = 0.1;
        let k = gram(&xs, h, true);
        let (_, mse, _) = loo_select(&k, &to_mat(&y), &[lam]).unwrap();
        let mut brute = 0.0;
        for out in 0..30 {
            let keep: Vec<usize> = (0..30).filter(|&i| i != out).collect();
            let kk = Mat::from_fn(29, 29, |a, b| k[(keep[a], keep[b])]);
            let yy = Mat::from_fn(29, 1, |a, _| y[(keep[a], 0)]);
            let mut a = kk.clone();
            for i in 0..29 {
                a[(i, i)] += lam;
            }
            let alpha = a.llt(Side::Lower).unwrap().solve(&yy);
            let pred: f64 = (0..29).map(|a| k[(out, keep[a])] * alpha[(a, 0)]).sum();
            brute += (y[(out, 0)] - pred).powi(2);
        }
        brute /= 30.0;
        assert!((mse - brute).abs() < 1e-8 * brute.max(1.0), "{mse} vs {brute}");
    }

    #[test]
    fn subsampled_selection_is_deterministic() {
        let (x, y, _) = data(300, 3);
        let cfg = KrrConfig { max_select_rows: 100, ..KrrConfig::default() };
        let a = fit(&x, &y, &cfg).unwrap();
        let b = fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.residuals.norm() / y.norm() < 0.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y, _) = data(10, 4);
        assert!(fit(&x, &y.rows(0, 5).into_owned(), &KrrConfig::default()).is_err());
        let cfg = KrrConfig { ridge: Some(0.0), ..KrrConfig::default() };
        assert!(fit(&x, &y, &cfg).is_err());
    }
}
