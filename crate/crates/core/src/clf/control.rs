use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use super::QuadraticClf;
use crate::error::{Error, Result};
use crate::lifting::BilinearModel;
use crate::linalg::{dot, mat_vec, quad_form, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// `u = −K sgn(b)`.
    Sign,
    /// `u = −K b`.
    #[default]
    Gradient,
    /// `u = −(a + √(a² + b⁴)) / b`.
    Sontag,
    /// `u = −(a + √(a² + q(z) b²)) / b`.
    ModifiedSontag,
}

/// State cost `q(z)` of the modified Sontag formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateCost {
    /// `w zᵀz`.
    Quadratic { weight: f64 },
    /// `Σ w_i z_i²`.
    Diagonal { weights: Vec<f64> },
}

impl Default for StateCost {
    fn default() -> Self {
        Self::Quadratic { weight: 1.0 }
    }
}

impl StateCost {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Self::Quadratic { weight } => weight * dot(z, z),
            Self::Diagonal { weights } => weights.iter().zip(z).map(|(w, v)| w * v * v).sum(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            Self::Quadratic { weight } => *weight >= 0.0 && weight.is_finite(),
            Self::Diagonal { weights } => weights.len() == dim && weights.iter().all(|w| *w >= 0.0 && w.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(
                "state cost must be non-negative and match the lifted dimension".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default)]
    pub kind: ControllerKind,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub q: StateCost,
}

fn default_gain() -> f64 {
    10.0
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Gradient,
            gain: default_gain(),
            q: StateCost::default(),
        }
    }
}

/// CLF feedback on the lifted coordinates, with
/// `a(z) = zᵀ(PA + AᵀP)z` and `b(z) = zᵀ(PB + BᵀP)z + 2 zᵀ P b₀`.
#[derive(Clone)]
pub struct FeedbackLaw {
    spec: ControllerSpec,
    p: Mat<f64>,
    q: Mat<f64>,
    s: Mat<f64>,
    pb0: Vec<f64>,
    /// Frobenius norm of the homogeneous input form.
    s_norm: f64,
    model: Option<Arc<BilinearModel>>,
}

impl std::fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackLaw")
            .field("spec", &self.spec)
            .field("dim", &self.p.nrows())
            .finish_non_exhaustive()
    }
}

fn lyap(p: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Mat<f64> {
    let pm = p * m;
    symmetrize(&(&pm + pm.transpose()))
}

impl FeedbackLaw {
    /// Law for `ż = A z + u (B z + b₀)` without a state decoder.
    pub fn from_matrices(
        spec: ControllerSpec,
        p: MatRef<'_, f64>,
        a: MatRef<'_, f64>,
        b: MatRef<'_, f64>,
        b0: &[f64],
    ) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || a.nrows() != n || a.ncols() != n || b.nrows() != n || b.ncols() != n || b0.len() != n {
            return Err(Error::Validation("controller matrices have inconsistent sizes".into()));
        }
        if !(spec.gain >= 0.0 && spec.gain.is_finite()) {
            return Err(Error::Validation(format!(
                "gain must be non-negative, got {}",
                spec.gain
            )));
        }
        spec.q.validate(n)?;
        let q = lyap(p, a);
        let s = lyap(p, b);
        let pb0 = mat_vec(p, b0);
        let s_norm = (s.norm_l2().powi(2) + 2.0 * dot(&pb0, &pb0)).sqrt();
        Ok(Self {
            spec,
            p: p.to_owned(),
            q,
            s,
            pb0,
            s_norm,
            model: None,
        })
    }

    pub fn new(spec: ControllerSpec, clf: &QuadraticClf, model: Arc<BilinearModel>) -> Result<Self> {
        if clf.dim() != model.dim() {
            return Err(Error::Validation(format!(
                "CLF has dimension {}, model has {}",
                clf.dim(),
                model.dim()
            )));
        }
        let mut law = Self::from_matrices(
            spec,
            clf.p.as_ref(),
            model.a.as_ref(),
            model.b.as_ref(),
            &model.input_offset,
        )?;
        law.model = Some(model);
        Ok(law)
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        quad_form(self.p.as_ref(), z)
    }

    pub fn drift_form(&self, z: &[f64]) -> f64 {
        quad_form(self.q.as_ref(), z)
    }

    pub fn input_form(&self, z: &[f64]) -> f64 {
        quad_form(self.s.as_ref(), z) + 2.0 * dot(z, &self.pb0)
    }

    /// Switching threshold `1e-9 (1 + ‖z‖²) ‖S‖_F`.
    pub fn b_tol(&self, z: &[f64]) -> f64 {
        1e-9 * (1.0 + dot(z, z)) * self.s_norm
    }

    /// `u(x) = k(Ψ̂(x))`. Returns NaN if the law is not attached to a model
    /// or the evaluation is not finite, which the integrator treats as
    /// divergence.
    pub fn state_feedback(&self, x: &[f64]) -> f64 {
        match &self.model {
            Some(m) => control_input(self, &m.lift(x)).unwrap_or(f64::NAN),
            None => f64::NAN,
        }
    }

    pub fn lift(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.model.as_ref().map(|m| m.lift(x))
    }
}

/// Stable `a + √(a² + c)` for `c ≥ 0`.
fn sontag_numerator(a: f64, c: f64) -> f64 {
    let r = (a * a + c).sqrt();
    if a >= 0.0 {
        a + r
    } else if r - a == 0.0 {
        0.0
    } else {
        c / (r - a)
    }
}

pub fn control_input(law: &FeedbackLaw, z: &[f64]) -> Result<f64> {
    if z.len() != law.dim() {
        return Err(Error::Validation(format!(
            "lifted state has {} entries, law expects {}",
            z.len(),
            law.dim()
        )));
    }
    let a = law.drift_form(z);
    let b = law.input_form(z);
    let k = law.spec.gain;
    let u = match law.spec.kind {
        ControllerKind::Sign => {
            if b > 0.0 {
                -k
            } else if b < 0.0 {
                k
            } else {
                0.0
            }
        }
        ControllerKind::Gradient => -k * b,
        ControllerKind::Sontag => {
            if b.abs() > law.b_tol(z) {
                -sontag_numerator(a, b.powi(4)) / b
            } else {
                0.0
            }
        }
        ControllerKind::ModifiedSontag => {
            if b.abs() > law.b_tol(z) {
                -sontag_numerator(a, law.spec.q.eval(z) * b * b) / b
            } else {
                0.0
            }
        }
    };
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::Numerical(format!(
            "control input is not finite (a = {a}, b = {b})"
        )))
    }
}

/// `V̇ = a(z) + u b(z)`.
pub fn clf_derivative(law: &FeedbackLaw, z: &[f64], u: f64) -> f64 {
    law.drift_form(z) + u * law.input_form(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::mat;

    fn law(kind: ControllerKind, gain: f64, q: StateCost, p: Mat<f64>, a: Mat<f64>, b: Mat<f64>) -> FeedbackLaw {
        let n = p.nrows();
        FeedbackLaw::from_matrices(
            ControllerSpec { kind, gain, q },
            p.as_ref(),
            a.as_ref(),
            b.as_ref(),
            &vec![0.0; n],
        )
        .unwrap()
    }

    fn all_kinds() -> [ControllerKind; 4] {
        [
            ControllerKind::Sign,
            ControllerKind::Gradient,
            ControllerKind::Sontag,
            ControllerKind::ModifiedSontag,
        ]
    }

    #[test]
    fn zero_state_zero_input() {
        for kind in all_kinds() {
            let l = law(
                kind,
                10.0,
                StateCost::default(),
                Mat::identity(2, 2),
                mat![[1.0, 0.5], [0.0, -1.0]],
                Mat::identity(2, 2),
            );
            assert_eq!(control_input(&l, &[0.0, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn sontag_unit_case() {
        // P = 1, A = 0, B = 1/2 → a = 0, b = z²; z = 1 gives b = 1
        let l = law(
            ControllerKind::Sontag,
            1.0,
            StateCost::default(),
            mat![[1.0]],
            mat![[0.0]],
            mat![[0.5]],
        );
        assert!((control_input(&l, &[1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_substitution() {
        // b(z) = 2 B z² = 0.3 with B = 0.15, z = 1
        let l = law(
            ControllerKind::Gradient,
            10.0,
            StateCost::default(),
            mat![[1.0]],
            mat![[0.0]],
            mat![[0.15]],
        );
        assert!((control_input(&l, &[1.0]).unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn modified_sontag_zero_cost_with_decaying_drift() {
        let q = StateCost::Quadratic { weight: 0.0 };
        let l = law(
            ControllerKind::ModifiedSontag,
            1.0,
            q,
            mat![[1.0]],
            mat![[-1.0]],
            mat![[0.5]],
        );
        assert_eq!(control_input(&l, &[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn derivative_identities() {
        let p = mat![[2.0, 0.3], [0.3, 1.0]];
        let a = mat![[0.4, 1.0], [-1.0, -0.2]];
        let b = mat![[1.0, 0.2], [0.0, -0.5]];
        let z = [0.3, -0.8];
        let s = law(
            ControllerKind::Sontag,
            1.0,
            StateCost::default(),
            p.clone(),
            a.clone(),
            b.clone(),
        );
        let (av, bv) = (s.drift_form(&z), s.input_form(&z));
        assert_eq!(clf_derivative(&s, &z, 0.0), av);
        let u = control_input(&s, &z).unwrap();
        assert!((clf_derivative(&s, &z, u) + (av * av + bv.powi(4)).sqrt()).abs() < 1e-12);
        let g = law(
            ControllerKind::Gradient,
            7.0,
            StateCost::default(),
            p.clone(),
            a.clone(),
            b.clone(),
        );
        let u = control_input(&g, &z).unwrap();
        assert!((clf_derivative(&g, &z, u) - (av - 7.0 * bv * bv)).abs() < 1e-12);
        let sg = law(ControllerKind::Sign, 3.0, StateCost::default(), p, a, b);
        assert_eq!(control_input(&sg, &z).unwrap().abs(), 3.0);
    }

    #[test]
    fn affine_input_form() {
        let p = mat![[1.0, 0.0], [0.0, 2.0]];
        let zero = Mat::<f64>::zeros(2, 2);
        let l = FeedbackLaw::from_matrices(
            ControllerSpec::default(),
            p.as_ref(),
            zero.as_ref(),
            zero.as_ref(),
            &[1.0, 1.0],
        )
        .unwrap();
        // b(z) = 2 zᵀ P b₀ = 2 (z₁ + 2 z₂)
        assert!((l.input_form(&[0.5, 0.25]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gain_zero_is_open_loop_and_negative_gain_rejected() {
        let i = Mat::<f64>::identity(1, 1);
        let mut spec = ControllerSpec {
            kind: ControllerKind::Gradient,
            gain: 0.0,
            q: StateCost::default(),
        };
        let l = FeedbackLaw::from_matrices(spec.clone(), i.as_ref(), i.as_ref(), i.as_ref(), &[0.0]).unwrap();
        assert_eq!(control_input(&l, &[0.4]).unwrap(), 0.0);
        spec.gain = -1.0;
        assert!(FeedbackLaw::from_matrices(spec, i.as_ref(), i.as_ref(), i.as_ref(), &[0.0]).is_err());
    }
}
