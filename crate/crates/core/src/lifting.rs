//! Realified Koopman eigenfunction coordinates and the lifted bilinear model.

use faer::prelude::*;
use faer::{Mat, MatRef};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::edmd::{MonomialDictionary, Spectrum};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, from_rows, lu_solve, mat_vec, to_rows};
use crate::poly::{PolyField, Polynomial};

const LOG_FLOOR: f64 = 1e-12;
const CONDITION_LIMIT: f64 = 1e12;
const CONSTANT_LEAD: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateKind {
    Real,
    ComplexRe,
    ComplexIm,
}

/// Which eigenvalue fills the drift blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftBlock {
    /// Continuous-time `λ = ln(μ)/Δt`.
    #[default]
    Continuous,
    /// Discrete `μ` in rotation-scaling form, kept for comparison.
    Discrete,
}

/// Real eigenfunction coordinates `Ψ̂(x) = Vᵀ H(x)`.
///
/// `v_full` is square and holds every realified eigenvector, including the
/// constant mode when one was found. The lifted state keeps only the
/// `retained` coordinates and is centered so that `lift(0) = 0`.
#[derive(Debug, Clone)]
pub struct RealEigenbasis {
    dictionary: MonomialDictionary,
    dt: f64,
    v_full: Mat<f64>,
    kinds: Vec<CoordinateKind>,
    discrete: Vec<Complex64>,
    constant: Option<usize>,
    retained: Vec<usize>,
    offset_full: Vec<f64>,
    condition: f64,
    decoder: Mat<f64>,
}

impl RealEigenbasis {
    /// Assembles a basis from realified columns. `discrete` holds the
    /// discrete eigenvalue of each coordinate (`μ` on the `ComplexRe`
    /// coordinate, `μ̄` on its partner).
    pub fn new(
        dictionary: MonomialDictionary,
        dt: f64,
        v_full: Mat<f64>,
        kinds: Vec<CoordinateKind>,
        discrete: Vec<Complex64>,
        constant: Option<usize>,
    ) -> Result<Self> {
        let n = dictionary.len();
        if v_full.nrows() != n || v_full.ncols() != n || kinds.len() != n || discrete.len() != n {
            return Err(Error::Validation(format!("eigenbasis must have {n} coordinates")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        for (i, k) in kinds.iter().enumerate() {
            let ok = match k {
                CoordinateKind::Real => true,
                CoordinateKind::ComplexRe => kinds.get(i + 1) == Some(&CoordinateKind::ComplexIm),
                CoordinateKind::ComplexIm => i > 0 && kinds[i - 1] == CoordinateKind::ComplexRe,
            };
            if !ok {
                return Err(Error::Validation(format!("coordinate {i} breaks conjugate pairing")));
            }
        }
        for (i, mu) in discrete.iter().enumerate() {
            if mu.norm() <= LOG_FLOOR {
                return Err(Error::LogSingularity {
                    index: i,
                    modulus: mu.norm(),
                });
            }
        }
        if let Some(c) = constant {
            if c >= n || kinds[c] != CoordinateKind::Real {
                return Err(Error::Validation("constant mode must be a real coordinate".into()));
            }
        }
        let condition = condition_number(v_full.as_ref());
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::IllConditionedBasis {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
        let retained = (0..n).filter(|i| Some(*i) != constant).collect();
        let offset_full = (0..n).map(|j| v_full[(0, j)]).collect();
        let w_t = lu_solve(v_full.as_ref(), Mat::<f64>::identity(n, n).as_ref());
        // rows of (Vᵀ)⁻¹ that reproduce the linear monomials
        let dn = dictionary.n();
        let mut unit = vec![0u32; dn];
        let decoder = Mat::from_fn(dn, n, |i, j| {
            unit.iter_mut().for_each(|u| *u = 0);
            unit[i] = 1;
            let k = dictionary.index_of(&unit).expect("degree ≥ 1 dictionary");
            let s = dictionary.scale().map_or(1.0, |s| s[i]);
            s * w_t[(j, k)]
        });
        Ok(Self {
            dictionary,
            dt,
            v_full,
            kinds,
            discrete,
            constant,
            retained,
            offset_full,
            condition,
            decoder,
        })
    }

    pub fn dictionary(&self) -> &MonomialDictionary {
        &self.dictionary
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Lifted dimension (constant mode excluded).
    pub fn dim(&self) -> usize {
        self.retained.len()
    }

    pub fn full_dim(&self) -> usize {
        self.v_full.ncols()
    }

    pub fn v_full(&self) -> MatRef<'_, f64> {
        self.v_full.as_ref()
    }

    /// Columns of `V_full` for the retained coordinates.
    pub fn v(&self) -> Mat<f64> {
        Mat::from_fn(self.v_full.nrows(), self.dim(), |i, j| {
            self.v_full[(i, self.retained[j])]
        })
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn constant_mode(&self) -> Option<usize> {
        self.constant
    }

    pub fn kinds_full(&self) -> &[CoordinateKind] {
        &self.kinds
    }

    pub fn kinds(&self) -> Vec<CoordinateKind> {
        self.retained.iter().map(|&i| self.kinds[i]).collect()
    }

    pub fn discrete_full(&self) -> &[Complex64] {
        &self.discrete
    }

    /// Continuous eigenvalue of each retained coordinate.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.retained.iter().map(|&i| self.discrete[i].ln() / self.dt).collect()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `Ψ̂_full(0)`.
    pub fn offset_full(&self) -> &[f64] {
        &self.offset_full
    }

    pub fn offset(&self) -> Vec<f64> {
        self.retained.iter().map(|&i| self.offset_full[i]).collect()
    }

    /// Uncentered `Vᵀ H(x)` over all coordinates.
    pub fn eval_full(&self, x: &[f64]) -> Vec<f64> {
        let h = self.dictionary.eval(x);
        (0..self.v_full.ncols())
            .map(|j| (0..h.len()).map(|k| self.v_full[(k, j)] * h[k]).sum())
            .collect()
    }

    /// `z = Ψ̂(x) − Ψ̂(0)` on the retained coordinates.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let h = self.dictionary.eval(x);
        self.retained
            .iter()
            .map(|&j| {
                let v: f64 = (0..h.len()).map(|k| self.v_full[(k, j)] * h[k]).sum();
                v - self.offset_full[j]
            })
            .collect()
    }

    /// Recovers the state from lifted coordinates through the linear
    /// monomials, taking the constant mode at its value at the origin.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut xi = self.offset_full.clone();
        for (zi, &j) in z.iter().zip(&self.retained) {
            xi[j] += zi;
        }
        mat_vec(self.decoder.as_ref(), &xi)
    }
}

/// Converts a sorted, conjugate-paired spectrum into real coordinates.
///
/// A real eigenvalue within `constant_mode_tol` of 1 whose eigenvector is
/// dominated by the constant monomial is marked as the constant mode.
pub fn realify(
    spectrum: &Spectrum,
    dictionary: &MonomialDictionary,
    dt: f64,
    constant_mode_tol: f64,
) -> Result<RealEigenbasis> {
    let n = dictionary.len();
    if spectrum.len() != n {
        return Err(Error::Validation(format!(
            "spectrum has {} eigenpairs, dictionary has {n} entries",
            spectrum.len()
        )));
    }
    let mut v_full = Mat::<f64>::zeros(n, n);
    let mut kinds = Vec::with_capacity(n);
    let mut discrete = Vec::with_capacity(n);
    let mut constant: Option<(usize, f64)> = None;
    let mut j = 0;
    while j < n {
        let mu = spectrum.values[j];
        let v = &spectrum.vectors[j];
        if mu.norm() <= LOG_FLOOR {
            return Err(Error::LogSingularity {
                index: j,
                modulus: mu.norm(),
            });
        }
        if mu.im == 0.0 {
            for k in 0..n {
                v_full[(k, j)] = v[k].re;
            }
            kinds.push(CoordinateKind::Real);
            discrete.push(mu);
            let lead = v[0].re.abs();
            if (mu.re - 1.0).abs() <= constant_mode_tol
                && lead >= CONSTANT_LEAD
                && constant.is_none_or(|(_, best)| lead > best)
            {
                constant = Some((j, lead));
            }
            j += 1;
        } else {
            if j + 1 >= n || spectrum.values[j + 1] != mu.conj() || mu.im < 0.0 {
                return Err(Error::Validation(format!(
                    "eigenvalue {j} is complex but not followed by its conjugate"
                )));
            }
            for k in 0..n {
                v_full[(k, j)] = 2.0 * v[k].re;
                v_full[(k, j + 1)] = -2.0 * v[k].im;
            }
            kinds.extend([CoordinateKind::ComplexRe, CoordinateKind::ComplexIm]);
            discrete.extend([mu, mu.conj()]);
            j += 2;
        }
    }
    RealEigenbasis::new(
        dictionary.clone(),
        dt,
        v_full,
        kinds,
        discrete,
        constant.map(|(i, _)| i),
    )
}

/// Block-diagonal drift matrix over the retained coordinates.
pub fn build_a(basis: &RealEigenbasis, block: DriftBlock) -> Mat<f64> {
    let kinds = basis.kinds();
    let values: Vec<Complex64> = match block {
        DriftBlock::Continuous => basis.eigenvalues(),
        DriftBlock::Discrete => basis.retained.iter().map(|&i| basis.discrete[i]).collect(),
    };
    let m = kinds.len();
    let mut a = Mat::<f64>::zeros(m, m);
    let mut i = 0;
    while i < m {
        match kinds[i] {
            CoordinateKind::Real => {
                a[(i, i)] = values[i].re;
                i += 1;
            }
            _ => {
                let l = values[i];
                a[(i, i)] = l.re;
                a[(i, i + 1)] = l.im;
                a[(i + 1, i)] = -l.im;
                a[(i + 1, i + 1)] = l.re;
                i += 2;
            }
        }
    }
    a
}

/// Exact expansion `(∂H/∂x) g = C H` in the dictionary.
fn input_expansion(dictionary: &MonomialDictionary, g: &PolyField) -> Result<Mat<f64>> {
    let n = dictionary.len();
    if g.dim() != dictionary.n() {
        return Err(Error::Validation(format!(
            "input field has dimension {}, dictionary expects {}",
            g.dim(),
            dictionary.n()
        )));
    }
    let mut c = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        let hk = dictionary.polynomial(k);
        let mut p = Polynomial::zero(dictionary.n());
        for (i, gi) in g.components().iter().enumerate() {
            if gi.is_zero() {
                continue;
            }
            p = p.add(&hk.derivative(i).mul(gi));
        }
        for (alpha, coef) in p.terms() {
            let j = dictionary.index_of(alpha).ok_or_else(|| Error::SpanViolation {
                degree: alpha.iter().sum(),
                max: dictionary.degree(),
            })?;
            c[(k, j)] += coef / dictionary.coefficient(j);
        }
    }
    Ok(c)
}

/// Input matrix in the full realified coordinates, `B = Vᵀ C (Vᵀ)⁻¹`, from
/// the exact symbolic expansion of `(∂H/∂x) g`. The residual is 0.
pub fn build_b_exact(basis: &RealEigenbasis, g: &PolyField) -> Result<(Mat<f64>, f64)> {
    let c = input_expansion(&basis.dictionary, g)?;
    let v = basis.v_full.as_ref();
    // Bᵀ = V⁻¹ (Cᵀ V)
    let ctv = c.transpose() * v;
    let bt = lu_solve(v, ctv.as_ref());
    Ok((bt.transpose().to_owned(), 0.0))
}

/// Least-squares input matrix in the full realified coordinates, fitted to
/// `Vᵀ J_H(x) g(x) ≈ B Ψ̂(x)` on the samples. Returns `B` and the relative
/// residual.
pub fn build_b_lsq(basis: &RealEigenbasis, g: &PolyField, samples: &[Vec<f64>]) -> Result<(Mat<f64>, f64)> {
    let n = basis.full_dim();
    let dn = basis.dictionary.n();
    if g.dim() != dn {
        return Err(Error::Validation(format!(
            "input field has dimension {}, dictionary expects {dn}",
            g.dim()
        )));
    }
    if samples.len() < n {
        return Err(Error::DegenerateSampling(format!(
            "{} samples cannot determine {n} coordinates",
            samples.len()
        )));
    }
    let s = samples.len();
    let mut xi = Mat::<f64>::zeros(s, n);
    let mut t = Mat::<f64>::zeros(s, n);
    for (r, x) in samples.iter().enumerate() {
        if x.len() != dn || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("sample {r} is malformed")));
        }
        let full = basis.eval_full(x);
        let jac = basis.dictionary.jacobian(x);
        let gx = g.eval(x);
        let jg = mat_vec(jac.as_ref(), &gx);
        for c in 0..n {
            xi[(r, c)] = full[c];
            t[(r, c)] = (0..jg.len()).map(|k| basis.v_full[(k, c)] * jg[k]).sum();
        }
    }
    let svd = xi.thin_svd();
    let sv = svd.s_diagonal();
    let smax = (0..sv.nrows()).map(|i| sv.read(i)).fold(0.0, f64::max);
    let rank = (0..sv.nrows()).filter(|&i| sv.read(i) > 1e-12 * smax).count();
    if smax == 0.0 || rank < n {
        return Err(Error::DegenerateSampling(format!(
            "regressor has rank {rank}, need {n}"
        )));
    }
    // Ξ Bᵀ ≈ T
    let bt = xi.qr().solve_lstsq(&t);
    let resid = &xi * &bt - &t;
    let tn = t.norm_l2();
    let rel = if tn == 0.0 { 0.0 } else { resid.norm_l2() / tn };
    Ok((bt.transpose().to_owned(), rel))
}

/// Lifted model `ż = A z + u (B z + b₀)` on the retained coordinates.
///
/// `b₀ = B_full[retained, :] Ψ̂_full(0)` carries the input direction
/// contributed by the constant eigenfunction and by the centering offset.
#[derive(Debug, Clone)]
pub struct BilinearModel {
    pub a: Mat<f64>,
    pub b: Mat<f64>,
    pub input_offset: Vec<f64>,
    pub b_full: Mat<f64>,
    pub basis: RealEigenbasis,
    pub span_residual: f64,
    pub drift_block: DriftBlock,
}

impl BilinearModel {
    pub fn assemble(
        basis: RealEigenbasis,
        drift_block: DriftBlock,
        b_full: Mat<f64>,
        span_residual: f64,
    ) -> Result<Self> {
        let n = basis.full_dim();
        if b_full.nrows() != n || b_full.ncols() != n {
            return Err(Error::Validation(format!("B must be {n}×{n}")));
        }
        let a = build_a(&basis, drift_block);
        let ret = basis.retained();
        let b = Mat::from_fn(ret.len(), ret.len(), |i, j| b_full[(ret[i], ret[j])]);
        let off = basis.offset_full();
        let input_offset = ret
            .iter()
            .map(|&i| (0..n).map(|j| b_full[(i, j)] * off[j]).sum())
            .collect();
        Ok(Self {
            a,
            b,
            input_offset,
            b_full,
            basis,
            span_residual,
            drift_block,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        self.basis.lift(x)
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        self.basis.decode(z)
    }

    /// `B z + b₀`.
    pub fn input_direction(&self, z: &[f64]) -> Vec<f64> {
        let mut out = mat_vec(self.b.as_ref(), z);
        for (o, c) in out.iter_mut().zip(&self.input_offset) {
            *o += c;
        }
        out
    }

    /// `A z + u (B z + b₀)`.
    pub fn rhs(&self, z: &[f64], u: f64) -> Vec<f64> {
        let mut out = mat_vec(self.a.as_ref(), z);
        if u != 0.0 {
            for (o, d) in out.iter_mut().zip(self.input_direction(z)) {
                *o += u * d;
            }
        }
        out
    }

    /// `exp(A τ)`, exploiting the block structure.
    pub fn transition(&self, tau: f64) -> Mat<f64> {
        let m = self.dim();
        let kinds = self.basis.kinds();
        let mut e = Mat::<f64>::zeros(m, m);
        let mut i = 0;
        while i < m {
            if kinds[i] == CoordinateKind::Real {
                e[(i, i)] = (self.a[(i, i)] * tau).exp();
                i += 1;
            } else {
                let (re, im) = (self.a[(i, i)], self.a[(i, i + 1)]);
                let r = (re * tau).exp();
                let (s, c) = (im * tau).sin_cos();
                e[(i, i)] = r * c;
                e[(i, i + 1)] = r * s;
                e[(i + 1, i)] = -r * s;
                e[(i + 1, i + 1)] = r * c;
                i += 2;
            }
        }
        e
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            a: to_rows(self.a.as_ref()),
            b: to_rows(self.b.as_ref()),
            input_offset: self.input_offset.clone(),
            b_full: to_rows(self.b_full.as_ref()),
            v: to_rows(self.basis.v().as_ref()),
            v_full: to_rows(self.basis.v_full()),
            offset: self.basis.offset(),
            dt: self.basis.dt(),
            dictionary: self.basis.dictionary().clone(),
            eigenvalues: self.basis.eigenvalues().iter().map(|c| [c.re, c.im]).collect(),
            discrete_eigenvalues: self.basis.discrete_full().iter().map(|c| [c.re, c.im]).collect(),
            kinds: self.basis.kinds_full().to_vec(),
            retained: self.basis.retained().to_vec(),
            constant_mode: self.basis.constant_mode(),
            span_residual: self.span_residual,
            condition: self.basis.condition(),
            drift_block: self.drift_block,
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        let v_full = from_rows(&f.v_full)?;
        let discrete = f
            .discrete_eigenvalues
            .iter()
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let basis = RealEigenbasis::new(f.dictionary, f.dt, v_full, f.kinds, discrete, f.constant_mode)?;
        if basis.retained() != f.retained.as_slice() {
            return Err(Error::Validation(
                "retained coordinates disagree with constant_mode".into(),
            ));
        }
        let b_full = from_rows(&f.b_full)?;
        let model = Self::assemble(basis, f.drift_block, b_full, f.span_residual)?;
        let a = from_rows(&f.a)?;
        let b = from_rows(&f.b)?;
        if a != model.a || b != model.b {
            return Err(Error::Validation("A or B disagree with the stored eigenbasis".into()));
        }
        Ok(model)
    }
}

/// JSON layout of a [`BilinearModel`]. `A`, `B`, `V` and `offset` cover the
/// retained coordinates; the `_full` fields include the constant mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub input_offset: Vec<f64>,
    #[serde(rename = "B_full")]
    pub b_full: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    #[serde(rename = "V_full")]
    pub v_full: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub dt: f64,
    pub dictionary: MonomialDictionary,
    pub eigenvalues: Vec<[f64; 2]>,
    pub discrete_eigenvalues: Vec<[f64; 2]>,
    pub kinds: Vec<CoordinateKind>,
    pub retained: Vec<usize>,
    pub constant_mode: Option<usize>,
    pub span_residual: f64,
    pub condition: f64,
    pub drift_block: DriftBlock,
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn identity_basis(n: usize, degree: u32, discrete: Vec<Complex64>, kinds: Vec<CoordinateKind>) -> RealEigenbasis {
        let d = MonomialDictionary::new(n, degree).unwrap();
        let m = d.len();
        RealEigenbasis::new(d, 0.1, Mat::identity(m, m), kinds, discrete, None).unwrap()
    }

    #[test]
    fn realify_all_real() {
        let d = MonomialDictionary::new(1, 1).unwrap();
        let sp = Spectrum {
            values: vec![c(0.9, 0.0), c(0.5, 0.0)],
            vectors: vec![vec![c(0.6, 0.0), c(0.8, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
        };
        let b = realify(&sp, &d, 0.1, 1e-6).unwrap();
        assert_eq!(b.v_full(), mat![[0.6, 0.0], [0.8, 1.0]].as_ref());
        assert_eq!(b.dim(), 2);
    }

    #[test]
    fn realify_pair_continuous_eigenvalues() {
        let dt = 0.05;
        let d = MonomialDictionary::new(1, 1).unwrap();
        let mu = (c(-1.0, 2.0) * dt).exp();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sp = Spectrum {
            values: vec![mu, mu.conj()],
            vectors: vec![vec![c(s, 0.0), c(0.0, s)], vec![c(s, 0.0), c(0.0, -s)]],
        };
        let b = realify(&sp, &d, dt, 1e-6).unwrap();
        let l = b.eigenvalues();
        assert!((l[0] - c(-1.0, 2.0)).norm() < 1e-9);
        assert!((l[1] - c(-1.0, -2.0)).norm() < 1e-9);
        assert_eq!(b.kinds(), vec![CoordinateKind::ComplexRe, CoordinateKind::ComplexIm]);
        let a = build_a(&b, DriftBlock::Continuous);
        assert!((a[(0, 0)] + 1.0).abs() < 1e-9 && (a[(0, 1)] - 2.0).abs() < 1e-9);
        assert!((a[(1, 0)] + 2.0).abs() < 1e-9 && (a[(1, 1)] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_mode_dropped() {
        let d = MonomialDictionary::new(1, 1).unwrap();
        let sp = Spectrum {
            values: vec![c(1.0, 0.0), c(0.9, 0.0)],
            vectors: vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
        };
        let b = realify(&sp, &d, 0.1, 1e-6).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.constant_mode(), Some(0));
        assert_eq!(b.lift(&[0.0]), vec![0.0]);
        assert_eq!(b.lift(&[2.0]), vec![2.0]);
        assert!((b.decode(&b.lift(&[0.37]))[0] - 0.37).abs() < 1e-15);
        let a = build_a(&b, DriftBlock::Continuous);
        assert!((a[(0, 0)] - 0.9f64.ln() / 0.1).abs() < 1e-12);
    }

    #[test]
    fn log_singularity() {
        let d = MonomialDictionary::new(1, 1).unwrap();
        let sp = Spectrum {
            values: vec![c(1.0, 0.0), c(1e-13, 0.0)],
            vectors: vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
        };
        assert!(matches!(
            realify(&sp, &d, 0.1, 1e-6),
            Err(Error::LogSingularity { index: 1, .. })
        ));
    }

    #[test]
    fn ill_conditioned_basis_rejected() {
        let d = MonomialDictionary::new(1, 1).unwrap();
        let sp = Spectrum {
            values: vec![c(0.9, 0.0), c(0.8, 0.0)],
            vectors: vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(1.0, 0.0), c(1e-14, 0.0)]],
        };
        assert!(matches!(
            realify(&sp, &d, 0.1, 1e-6),
            Err(Error::IllConditionedBasis { .. })
        ));
    }

    #[test]
    fn single_real_block() {
        let b = identity_basis(
            1,
            1,
            vec![c((-0.1f64).exp(), 0.0), c(0.5, 0.0)],
            vec![CoordinateKind::Real; 2],
        );
        let a = build_a(&b, DriftBlock::Continuous);
        assert!((a[(0, 0)] + 1.0).abs() < 1e-12);
        let a = build_a(&b, DriftBlock::Discrete);
        assert_eq!(a[(1, 1)], 0.5);
    }

    #[test]
    fn exact_b_scalar_constant_input() {
        let b = identity_basis(1, 1, vec![c(1.0, 0.0), c(0.5, 0.0)], vec![CoordinateKind::Real; 2]);
        let (bm, r) = build_b_exact(&b, &PolyField::constant(&[1.0])).unwrap();
        assert_eq!(bm, mat![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(r, 0.0);
        let (bz, _) = build_b_exact(&b, &PolyField::constant(&[0.0])).unwrap();
        assert_eq!(bz, Mat::<f64>::zeros(2, 2));
    }

    #[test]
    fn exact_b_span_violation() {
        let d = MonomialDictionary::new(1, 2).unwrap();
        let b = RealEigenbasis::new(
            d,
            0.1,
            Mat::identity(3, 3),
            vec![CoordinateKind::Real; 3],
            vec![c(0.5, 0.0); 3],
            None,
        )
        .unwrap();
        let g = PolyField::new(vec![Polynomial::monomial(vec![2], 1.0)]);
        assert!(matches!(
            build_b_exact(&b, &g),
            Err(Error::SpanViolation { degree: 3, max: 2 })
        ));
    }

    #[test]
    fn lsq_matches_exact_and_detects_degenerate_samples() {
        let d = MonomialDictionary::new(2, 3).unwrap();
        let n = d.len();
        let v = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.1 / (1.0 + (i + 2 * j) as f64) });
        let b = RealEigenbasis::new(d, 0.1, v, vec![CoordinateKind::Real; n], vec![c(0.5, 0.0); n], None).unwrap();
        let g = PolyField::unit(2, 1);
        let (be, _) = build_b_exact(&b, &g).unwrap();
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin(), (1.3 * t).cos() * 0.8]
            })
            .collect();
        let (bl, res) = build_b_lsq(&b, &g, &samples).unwrap();
        assert!(res <= 1e-8);
        for i in 0..n {
            for j in 0..n {
                assert!((be[(i, j)] - bl[(i, j)]).abs() < 1e-6);
            }
        }
        let (bz, rz) = build_b_lsq(&b, &PolyField::constant(&[0.0, 0.0]), &samples).unwrap();
        assert_eq!(rz, 0.0);
        assert!(bz.norm_l2() == 0.0);
        let repeated = vec![vec![0.3, 0.2]; 50];
        assert!(matches!(
            build_b_lsq(&b, &g, &repeated),
            Err(Error::DegenerateSampling(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let d = MonomialDictionary::new(1, 1).unwrap();
        let sp = Spectrum {
            values: vec![c(1.0, 0.0), c(0.9, 0.0)],
            vectors: vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]],
        };
        let basis = realify(&sp, &d, 0.1, 1e-6).unwrap();
        let (bf, r) = build_b_exact(&basis, &PolyField::constant(&[1.0])).unwrap();
        let m = BilinearModel::assemble(basis, DriftBlock::Continuous, bf, r).unwrap();
        assert_eq!(m.input_offset, vec![1.0]);
        assert_eq!(m.b, mat![[0.0]]);
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = BilinearModel::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.a, m.a);
        assert_eq!(back.input_offset, m.input_offset);
    }
}
