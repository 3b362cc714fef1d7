use faer::complex_native::c64;
use faer::prelude::*;
use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Continuous-time LQR gain `K = R⁻¹ Bᵀ P` for a single input, with `P` the
/// stabilizing solution of `AᵀP + PA − P B R⁻¹ Bᵀ P + Q = 0` taken from the
/// stable invariant subspace of the Hamiltonian matrix.
pub fn lqr_reference(a: MatRef<'_, f64>, b: &[f64], q: MatRef<'_, f64>, r: f64) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Validation("LQR matrices have inconsistent sizes".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Validation(format!("R must be positive, got {r}")));
    }
    let h = Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a.read(i, j),
        (true, false) => -b[i] * b[j - n] / r,
        (false, true) => -q.read(i - n, j),
        (false, false) => -a.read(j - n, i - n),
    });
    let eig = h.eigendecomposition::<c64>();
    let s = eig.s().column_vector();
    let u = eig.u();
    let stable: Vec<usize> = (0..2 * n).filter(|&j| s.read(j).re < 0.0).collect();
    let scale = (0..2 * n).map(|j| s.read(j).abs()).fold(1.0, f64::max);
    if stable.len() != n || (0..2 * n).any(|j| s.read(j).re.abs() <= 1e-12 * scale) {
        return Err(Error::Model(
            "pair is not stabilizable: Hamiltonian has imaginary-axis eigenvalues".into(),
        ));
    }
    let x1 = Mat::<c64>::from_fn(n, n, |i, j| u.read(i, stable[j]));
    let x2 = Mat::<c64>::from_fn(n, n, |i, j| u.read(n + i, stable[j]));
    let sv = x1.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10 * smax) {
        return Err(Error::Model(
            "pair is not stabilizable: stable subspace is not a graph".into(),
        ));
    }
    // P X1 = X2  ⇔  X1ᵀ Pᵀ = X2ᵀ
    let pt = x1.transpose().partial_piv_lu().solve(x2.transpose());
    let p = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (pt.read(j, i).re + pt.read(i, j).re));
    Ok((0..n)
        .map(|j| (0..n).map(|i| b[i] * p[(i, j)]).sum::<f64>() / r)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    #[test]
    fn linearized_pendulum_gain() {
        let a = mat![[0.0, 1.0], [-1.0, 0.01]];
        let q = mat![[1.0, 0.0], [0.0, 0.0]];
        let k = lqr_reference(a.as_ref(), &[0.0, 1.0], q.as_ref(), 1.0).unwrap();
        assert!((k[0] - 0.41421356).abs() < 1e-6, "{k:?}");
        assert!((k[1] - 0.92023465).abs() < 1e-6, "{k:?}");
    }

    #[test]
    fn stable_scalar_zero_cost() {
        let k = lqr_reference(mat![[-1.0]].as_ref(), &[1.0], mat![[0.0]].as_ref(), 1.0).unwrap();
        assert!(k[0].abs() < 1e-12);
    }

    #[test]
    fn unstable_scalar_root() {
        let k = lqr_reference(mat![[1.0]].as_ref(), &[1.0], mat![[1.0]].as_ref(), 1.0).unwrap();
        assert!((k[0] - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn uncontrollable_unstable_mode() {
        let r = lqr_reference(mat![[1.0]].as_ref(), &[0.0], mat![[1.0]].as_ref(), 1.0);
        assert!(matches!(r, Err(Error::Model(_))));
    }
}
