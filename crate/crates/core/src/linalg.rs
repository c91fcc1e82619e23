//! Small dense helpers on top of nalgebra, plus conversions to faer for the
//! N×N kernel systems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Moore–Penrose pseudo-inverse with a relative singular value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(eps)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse: {e}")))
}

/// Ratio of the smallest to the largest singular value.
pub fn condition_ratio(m: &DMatrix<f64>) -> f64 {
    let s = m.singular_values();
    let max = s.max();
    if max == 0.0 {
        return 0.0;
    }
    s.min() / max
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Orthonormalizes `vectors` by modified Gram–Schmidt with one
/// reorthogonalization pass. Fails if they are (numerically) dependent.
pub fn orthonormalize(vectors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let norm0 = v.norm();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return Err(Error::Structure("zero or non-finite orthogonality vector".into()));
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let norm = w.norm();
        if norm < 1e-10 * norm0 {
            return Err(Error::Structure("orthogonality vectors are linearly dependent".into()));
        }
        out.push(w / norm);
    }
    Ok(out)
}

/// Orthonormal basis (as columns) of the orthogonal complement of span(ortho) in R^d.
pub fn complement_basis(ortho: &[DVector<f64>], d: usize) -> Result<DMatrix<f64>> {
    if ortho.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("orthogonality vector length differs from d".into()));
    }
    if ortho.len() >= d {
        return Err(Error::NoFreeDirection { constraints: ortho.len(), dim: d });
    }
    let mut basis = orthonormalize(ortho)?;
    let q = basis.len();
    // Greedily add the coordinate axis with the largest residual.
    while basis.len() < d {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = -1.0;
        for i in 0..d {
            let mut w = DVector::zeros(d);
            w[i] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&w);
                    w.axpy(-c, b, 1.0);
                }
            }
            let nrm = w.norm();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(w);
            }
        }
        let w = best.expect("d > 0");
        basis.push(&w / best_norm);
    }
    Ok(DMatrix::from_columns(&basis[q..]))
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Column means of an N×d matrix.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n)
}

/// Population standard deviations of the columns.
pub fn column_stds(m: &DMatrix<f64>) -> DVector<f64> {
    let mu = column_means(m);
    let n = m.nrows().max(1) as f64;
    DVector::from_fn(m.ncols(), |j, _| {
        (m.column(j).iter().map(|v| (v - mu[j]).powi(2)).sum::<f64>() / n).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn pinv_of_tall_full_rank_is_left_inverse() {
        let mut r = rng::stream(3, 0);
        let h = DMatrix::from_fn(6, 3, |_, _| r.sample::<f64, _>(StandardNormal));
        let p = pinv(&h).unwrap();
        assert!((p * &h - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let mut r = rng::stream(5, 0);
        let ortho: Vec<_> = (0..2).map(|_| random_unit(&mut r, 5)).collect();
        let q = complement_basis(&ortho, 5).unwrap();
        assert_eq!(q.ncols(), 3);
        assert!((q.transpose() * &q - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        for v in &ortho {
            assert!((q.transpose() * v).amax() < 1e-12);
        }
    }

    #[test]
    fn complement_rejects_dependent_or_full_sets() {
        let e3 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            complement_basis(&[e3.clone(), e3 * 2.0], 3),
            Err(Error::Structure(_))
        ));
        let e = DVector::from_vec(vec![1.0, 0.0]);
        let f = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            complement_basis(&[e, f], 2),
            Err(Error::NoFreeDirection { .. })
        ));
    }

    #[test]
    fn sym_apply_square_root_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_apply(&a, f64::sqrt);
        assert!((&s * &s - &a).amax() < 1e-12);
    }

    #[test]
    fn faer_round_trip() {
        let a = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(from_faer(to_faer(&a).as_ref()), a);
    }
}
