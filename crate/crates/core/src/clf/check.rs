use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{quad_form, sym_eigen, symmetrize};

/// Outcome of the sampled test of the quadratic stabilizability condition.
///
/// A pass only means no violating direction was found among the tested
/// points; it is reported with `certificate = "sampled"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityReport {
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
    pub points: usize,
    /// Points with `a(z) ≥ −tol`.
    pub active: usize,
    /// Smallest `|b(z)|` over the active points (infinite when none).
    #[serde(with = "crate::json")]
    pub margin: f64,
    pub certificate: String,
    pub tol: f64,
    /// Lifted radius within which no loss of input authority was found.
    #[serde(with = "crate::json")]
    pub radius: f64,
}

fn lyap(p: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Mat<f64> {
    let pm = p * m;
    symmetrize(&(&pm + pm.transpose()))
}

fn unit_sphere(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = crate::linalg::norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

fn columns(m: &Mat<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..m.ncols()).map(move |j| (0..m.nrows()).map(|i| m[(i, j)]).collect())
}

struct Scan {
    tol: f64,
    points: usize,
    active: usize,
    margin: f64,
    witness: Option<Vec<f64>>,
}

impl Scan {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            points: 0,
            active: 0,
            margin: f64::INFINITY,
            witness: None,
        }
    }

    fn visit(&mut self, z: &[f64], a: f64, b: f64) {
        self.points += 1;
        if a >= -self.tol {
            self.active += 1;
            self.margin = self.margin.min(b.abs());
            if b.abs() <= self.tol && self.witness.is_none() {
                self.witness = Some(z.to_vec());
            }
        }
    }

    fn finish(self) -> StabilizabilityReport {
        let radius = if self.witness.is_none() { f64::INFINITY } else { 0.0 };
        StabilizabilityReport {
            passed: self.witness.is_none(),
            witness: self.witness,
            points: self.points,
            active: self.active,
            margin: self.margin,
            certificate: "sampled".into(),
            tol: self.tol,
            radius,
        }
    }
}

/// Looks for `z ≠ 0` with `zᵀ(PA + AᵀP)z ≥ −tol` and `|zᵀ(PB + BᵀP)z| ≤ tol`
/// among `n_samples` seeded unit vectors and the eigenvectors of both forms.
pub fn check_stabilizability(
    p: MatRef<'_, f64>,
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> StabilizabilityReport {
    let n = p.nrows();
    let q = lyap(p, a);
    let s = lyap(p, b);
    let mut scan = Scan::new(tol);
    let (_, uq) = sym_eigen(q.as_ref());
    let (_, us) = sym_eigen(s.as_ref());
    for z in columns(&uq).chain(columns(&us)) {
        scan.visit(&z, quad_form(q.as_ref(), &z), quad_form(s.as_ref(), &z));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let z = unit_sphere(&mut rng, n);
        scan.visit(&z, quad_form(q.as_ref(), &z), quad_form(s.as_ref(), &z));
    }
    scan.finish()
}

/// Test for `ż = A z + u (B z + b₀)`, where the input form is
/// `b(z) = zᵀ(PB + BᵀP)z + 2 zᵀ P b₀`.
///
/// Along a unit direction `ẑ`, `b(r ẑ) = r² c₂ + r c₁` with `c₂ = ẑᵀ(PB + BᵀP)ẑ`
/// and `c₁ = 2 ẑᵀ P b₀`, so on an active direction (`a(ẑ) ≥ −tol`) the input
/// loses authority exactly at `r = |c₁ / c₂|`. The smallest such radius over
/// the tested directions is reported as `radius`. Near the origin the
/// condition reduces to the homogeneous one on the hyperplane `ẑ ⊥ P b₀`,
/// which is sampled separately. The check fails on a local violation or when
/// a loss of authority is found within `radius`.
#[allow(clippy::too_many_arguments)]
pub fn check_stabilizability_affine(
    p: MatRef<'_, f64>,
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    b0: &[f64],
    radius: f64,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> StabilizabilityReport {
    let n = p.nrows();
    let q = lyap(p, a);
    let s = lyap(p, b);
    let pb0: Vec<f64> = crate::linalg::mat_vec(p, b0);
    let pn = crate::linalg::norm(&pb0);
    let normal: Vec<f64> = if pn > 0.0 {
        pb0.iter().map(|v| v / pn).collect()
    } else {
        vec![0.0; n]
    };
    let project = |z: &[f64]| -> Option<Vec<f64>> {
        let d = crate::linalg::dot(z, &normal);
        let v: Vec<f64> = z.iter().zip(&normal).map(|(a, b)| a - d * b).collect();
        let r = crate::linalg::norm(&v);
        (r > 1e-9).then(|| v.into_iter().map(|x| x / r).collect())
    };

    let mut scan = Scan::new(tol);
    let mut certified = f64::INFINITY;
    let mut visit = |z: &[f64], scan: &mut Scan| {
        let qa = quad_form(q.as_ref(), z);
        let c2 = quad_form(s.as_ref(), z);
        let c1 = 2.0 * crate::linalg::dot(z, &pb0);
        scan.points += 1;
        if qa < -tol {
            return;
        }
        scan.active += 1;
        if c1.abs() <= tol {
            scan.margin = scan.margin.min(c2.abs());
            if c2.abs() <= tol && scan.witness.is_none() {
                scan.witness = Some(z.to_vec());
            }
            return;
        }
        scan.margin = scan.margin.min(c1.abs());
        if c2.abs() > tol {
            let r = (c1 / c2).abs();
            certified = certified.min(r);
            if r <= radius && scan.witness.is_none() {
                let sign = -(c1 * c2).signum();
                scan.witness = Some(z.iter().map(|v| sign * r * v).collect());
            }
        }
    };

    let (_, uq) = sym_eigen(q.as_ref());
    let (_, us) = sym_eigen(s.as_ref());
    for z in columns(&uq).chain(columns(&us)) {
        visit(&z, &mut scan);
        if let Some(zp) = project(&z) {
            visit(&zp, &mut scan);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let z = unit_sphere(&mut rng, n);
        visit(&z, &mut scan);
        if let Some(zp) = project(&z) {
            visit(&zp, &mut scan);
        }
    }
    let mut report = scan.finish();
    report.radius = certified;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    #[test]
    fn full_rank_input_form_passes() {
        let p = Mat::<f64>::identity(2, 2);
        let a = mat![[1.0, 0.0], [0.0, -1.0]];
        let b = Mat::<f64>::identity(2, 2);
        let r = check_stabilizability(p.as_ref(), a.as_ref(), b.as_ref(), 1000, 1e-8, 1);
        assert!(r.passed);
        assert!(r.active > 0);
    }

    #[test]
    fn degenerate_input_form_fails_at_e1() {
        let p = Mat::<f64>::identity(2, 2);
        let a = mat![[1.0, 0.0], [0.0, -1.0]];
        let b = mat![[0.0, 0.0], [0.0, 1.0]];
        let r = check_stabilizability(p.as_ref(), a.as_ref(), b.as_ref(), 1000, 1e-8, 1);
        assert!(!r.passed);
        let w = r.witness.unwrap();
        assert!((w[0].abs() - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);
    }

    #[test]
    fn hurwitz_drift_has_no_active_points() {
        let p = Mat::<f64>::identity(3, 3);
        let a = mat![[-1.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, -0.5]];
        let b = Mat::<f64>::zeros(3, 3);
        let r = check_stabilizability(p.as_ref(), a.as_ref(), b.as_ref(), 500, 1e-8, 3);
        assert!(r.passed);
        assert_eq!(r.active, 0);
    }

    #[test]
    fn affine_local_authority() {
        let p = Mat::<f64>::identity(2, 2);
        let a = mat![[-1.0, 0.0], [0.0, 1.0]];
        let b = Mat::<f64>::zeros(2, 2);
        // offset orthogonal to the unstable direction: e₂ is active with b ≡ 0
        let r = check_stabilizability_affine(p.as_ref(), a.as_ref(), b.as_ref(), &[1.0, 0.0], 1.0, 2000, 1e-8, 5);
        assert!(!r.passed);
        // offset along it: authority everywhere
        let r = check_stabilizability_affine(p.as_ref(), a.as_ref(), b.as_ref(), &[0.0, 1.0], 1.0, 2000, 1e-8, 5);
        assert!(r.passed, "{r:?}");
        assert!(r.radius.is_infinite());
    }

    #[test]
    fn affine_radius_of_lost_authority() {
        // b(r e₂) = r² + 2r·(−1) vanishes at r = 2 on the active direction e₂
        let p = Mat::<f64>::identity(2, 2);
        let a = mat![[-1.0, 0.0], [0.0, 1.0]];
        let b = mat![[0.0, 0.0], [0.0, 0.5]];
        let b0 = [0.0, -1.0];
        let r = check_stabilizability_affine(p.as_ref(), a.as_ref(), b.as_ref(), &b0, 1.0, 2000, 1e-8, 5);
        assert!(r.passed);
        assert!((r.radius - 2.0).abs() < 1e-9, "{}", r.radius);
        let r = check_stabilizability_affine(p.as_ref(), a.as_ref(), b.as_ref(), &b0, 3.0, 2000, 1e-8, 5);
        assert!(!r.passed);
        let w = r.witness.unwrap();
        let bw = 2.0 * 0.5 * w[1] * w[1] + -2.0 * w[1];
        assert!(bw.abs() < 1e-9 && (crate::linalg::norm(&w) - 2.0).abs() < 1e-9);
    }
}
