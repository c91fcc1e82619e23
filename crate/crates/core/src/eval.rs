//! Metrics: absolute Pearson correlations, assignment-matched MAC, Jacobian
//! perturbation at a prescribed SER and rank correlation for sweep trends.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;
use crate::oracle::{JacobianBatch, Source};
use crate::recovery::BetaReport;
use crate::rng;

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Dimension("correlation needs two equally long samples".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("correlation with a constant column".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// |corr(aᵢ, bⱼ)| for every column pair; shape a.ncols() × b.ncols().
pub fn abs_corr_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension("correlated matrices differ in rows".into()));
    }
    let ac: Vec<Vec<f64>> = a.column_iter().map(|c| c.iter().copied().collect()).collect();
    let bc: Vec<Vec<f64>> = b.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for (i, x) in ac.iter().enumerate() {
        for (j, y) in bc.iter().enumerate() {
            out[(i, j)] = pearson(x, y)?.abs();
        }
    }
    Ok(out)
}

/// Maximum-weight assignment of rows to distinct columns (rows ≤ cols).
/// Returns the column of each row. Shortest augmenting path, O(r²c).
pub fn max_weight_assignment(w: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (r, c) = w.shape();
    if r > c {
        return Err(Error::Dimension("assignment needs at least as many columns as rows".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite assignment weight".into()));
    }
    // Minimize cost = −w; 1-based potentials as in the classical formulation.
    let cost = |i: usize, j: usize| -w[(i - 1, j - 1)];
    let mut u = vec![0.0; r + 1];
    let mut v = vec![0.0; c + 1];
    let mut p = vec![0usize; c + 1];
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=c {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=c {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; r];
    for j in 1..=c {
        if p[j] > 0 {
            rows[p[j] - 1] = j - 1;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mac: f64,
    /// `matching[i]` is the estimated column matched to true column i.
    pub matching: Vec<usize>,
    /// |Pearson| between true (rows) and estimated (columns) coordinates.
    pub corr_matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ser: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta_report: Option<BetaReport>,
}

impl EvalReport {
    pub fn corr(&self) -> DMatrix<f64> {
        let r = self.corr_matrix.len();
        let c = self.corr_matrix.first().map_or(0, Vec::len);
        DMatrix::from_fn(r, c, |i, j| self.corr_matrix[i][j])
    }

    /// Matched |corr| of true column i.
    pub fn matched(&self, i: usize) -> f64 {
        self.corr_matrix[i][self.matching[i]]
    }
}

/// Mean absolute correlation between true and estimated columns under the
/// assignment maximizing total |corr|.
pub fn mac(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<EvalReport> {
    if truth.shape() != estimate.shape() {
        return Err(Error::Dimension(format!(
            "true matrix is {:?}, estimate is {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    let corr = abs_corr_matrix(truth, estimate)?;
    let matching = max_weight_assignment(&corr)?;
    let mac = matching.iter().enumerate().map(|(i, &j)| corr[(i, j)]).sum::<f64>()
        / matching.len().max(1) as f64;
    Ok(EvalReport {
        mac,
        matching,
        corr_matrix: corr.row_iter().map(|r| r.iter().copied().collect()).collect(),
        ser: None,
        beta_report: None,
    })
}

/// Adds symmetric Gaussian noise (off-diagonal variance ½, diagonal 1) scaled
/// so that the SER against `batch` equals `target_ser`; the result is centered.
pub fn perturb_jacobians(batch: &JacobianBatch, target_ser: f64, seed: u64) -> Result<JacobianBatch> {
    if !(target_ser > 0.0) || !target_ser.is_finite() {
        return Err(Error::Config("target SER must be positive and finite".into()));
    }
    let d = batch.dim();
    let mut r = rng::stream(seed, rng::PERTURB);
    let noise: Vec<DMatrix<f64>> = batch
        .raw()
        .iter()
        .map(|_| {
            let g = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
            (&g + g.transpose()) * 0.5
        })
        .collect();
    let signal: f64 = batch.raw().iter().map(frobenius_sq).sum();
    let energy: f64 = noise.iter().map(frobenius_sq).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("perturbation noise has zero energy".into()));
    }
    let c = (signal / (target_ser * energy)).sqrt();
    let raw = batch.raw().iter().zip(&noise).map(|(j, e)| j + e * c).collect();
    JacobianBatch::centered_from(raw, batch.space(), Source::Perturbed)
}

/// Ranks with ties averaged (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Space;
    use crate::stein::jacobian_ser;
    use proptest::prelude::{any, prop_assert, proptest};

    fn gaussian(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        DMatrix::from_fn(n, k, |_, _| r.sample::<f64, _>(StandardNormal))
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn mac_of_identity_is_one() {
        let e = gaussian(500, 4, 1);
        let r = mac(&e, &e).unwrap();
        assert!((r.mac - 1.0).abs() < 1e-12);
        assert_eq!(r.matching, vec![0, 1, 2, 3]);
    }

    #[test]
    fn mac_invariant_to_permutation_sign_and_scale() {
        let e = gaussian(500, 4, 2);
        let perm = [2, 0, 3, 1];
        let scale = [-2.0, 0.5, 3.0, -0.1];
        let est = DMatrix::from_fn(500, 4, |i, j| scale[j] * e[(i, perm[j])]);
        let r = mac(&e, &est).unwrap();
        assert!((r.mac - 1.0).abs() < 1e-12);
        for (i, &j) in r.matching.iter().enumerate() {
            assert_eq!(perm[j], i);
        }
    }

    #[test]
    fn independent_columns_have_small_mac() {
        let e = gaussian(2000, 4, 3);
        let f = gaussian(2000, 4, 4);
        assert!(mac(&e, &f).unwrap().mac <= 0.1);
    }

    #[test]
    fn constant_column_is_rejected() {
        let e = gaussian(10, 2, 5);
        let mut f = e.clone();
        f.column_mut(1).fill(3.0);
        assert!(matches!(mac(&e, &f), Err(Error::Degenerate(_))));
    }

    #[test]
    fn perturbation_hits_target_ser() {
        let raw: Vec<_> = (0..200).map(|m| gaussian(3, 3, 100 + m)).collect();
        let b = JacobianBatch::centered_from(raw, Space::Observed, Source::Oracle).unwrap();
        for target in [0.5, 2.0, 1e6] {
            let p = perturb_jacobians(&b, target, 7).unwrap();
            let s = jacobian_ser(&p, &b).unwrap();
            assert!((s / target - 1.0).abs() < 1e-9);
            assert_eq!(p.source(), Source::Perturbed);
        }
        let p1 = perturb_jacobians(&b, 2.0, 1).unwrap();
        let p2 = perturb_jacobians(&b, 2.0, 2).unwrap();
        assert_ne!(p1.raw()[0], p2.raw()[0]);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(n in 1usize..6, extra in 0usize..2, seed in any::<u64>()) {
            let mut r = rng::stream(seed, 0);
            let w = DMatrix::from_fn(n, n + extra, |_, _| r.random_range(0.0..1.0));
            let got = max_weight_assignment(&w).unwrap();
            let total = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| w[(i, j)]).sum::<f64>();
            let mut seen = std::collections::BTreeSet::new();
            prop_assert!(got.iter().all(|&j| seen.insert(j)));
            let best = permutations(n + extra)
                .into_iter()
                .map(|p| total(&p[..n]))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((total(&got) - best).abs() < 1e-12);
        }

        #[test]
        fn mac_in_unit_interval(seed in any::<u64>()) {
            let e = gaussian(50, 3, seed);
            let f = gaussian(50, 3, seed ^ 1);
            let r = mac(&e, &f).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.mac));
            prop_assert!(r.corr_matrix.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
