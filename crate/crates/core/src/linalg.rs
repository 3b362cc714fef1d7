//! Small dense helpers layered over `faer`.

use faer::prelude::*;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: MatRef<'_, f64>) -> (Vec<f64>, Mat<f64>) {
    let eig = m.selfadjoint_eigendecomposition(Side::Lower);
    let s = eig.s().column_vector();
    let values = (0..s.nrows()).map(|i| s.read(i)).collect();
    (values, eig.u().to_owned())
}

pub fn sym_eigenvalues(m: MatRef<'_, f64>) -> Vec<f64> {
    sym_eigen(m).0
}

pub fn lambda_max(m: MatRef<'_, f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NAN)
}

pub fn lambda_min(m: MatRef<'_, f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

pub fn singular_values(m: MatRef<'_, f64>) -> Vec<f64> {
    let svd = m.thin_svd();
    let s = svd.s_diagonal();
    (0..s.nrows()).map(|i| s.read(i)).collect()
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: MatRef<'_, f64>) -> f64 {
    let s = singular_values(m);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore-Penrose pseudoinverse dropping singular values below
/// `rel_threshold * sigma_max`. Returns the inverse and the retained rank.
pub fn pinv(m: MatRef<'_, f64>, rel_threshold: f64) -> (Mat<f64>, usize) {
    let svd = m.thin_svd();
    let u = svd.u();
    let v = svd.v();
    let s = svd.s_diagonal();
    let k = s.nrows();
    let smax = (0..k).map(|i| s.read(i)).fold(0.0, f64::max);
    let cutoff = rel_threshold * smax;
    let mut out = Mat::<f64>::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for r in 0..k {
        let sr = s.read(r);
        if sr <= cutoff || sr == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sr;
        for i in 0..m.ncols() {
            let vi = v.read(i, r) * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..m.nrows() {
                out[(i, j)] += vi * u.read(j, r);
            }
        }
    }
    (out, rank)
}

pub fn symmetrize(m: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

pub fn mat_vec(m: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), v.len());
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m.read(i, j) * v[j]).sum())
        .collect()
}

pub fn quad_form(m: MatRef<'_, f64>, z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..z.len() {
        if z[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..z.len() {
            row += m.read(i, j) * z[j];
        }
        acc += z[i] * row;
    }
    acc
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn to_rows(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m.read(i, j)).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation("ragged matrix rows".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Solves `m x = rhs` by LU with partial pivoting.
pub fn lu_solve(m: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    m.partial_piv_lu().solve(rhs)
}

pub fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m.read(i, j).is_finite()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    #[test]
    fn pinv_of_rank_one() {
        let m = mat![[1.0, 2.0], [2.0, 4.0]];
        let (p, rank) = pinv(m.as_ref(), 1e-10);
        assert_eq!(rank, 1);
        // m p m == m
        let back = &(&m * &p) * &m;
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[(i, j)] - m[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condition_of_singular_is_infinite() {
        let m = mat![[1.0, 0.0], [0.0, 0.0]];
        assert!(condition_number(m.as_ref()).is_infinite());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
