//! Benchmark control-affine systems, ODE integration and snapshot generation.

mod integrate;
mod snapshots;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolyField;

pub use integrate::{integrate, IntegrationMethod, IntegrationOptions, Trajectory};
pub use snapshots::{generate_snapshots, SamplingBox, SamplingMode, SnapshotDataset, SnapshotMap, SnapshotSpec};

/// Drift vector field, written into the output slice.
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `ẋ = f(x) + g(x) u` with a single scalar input.
#[derive(Clone)]
pub struct ControlAffineSystem {
    name: String,
    dim: usize,
    drift: DriftFn,
    input: PolyField,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("input", &self.input)
            .finish_non_exhaustive()
    }
}

impl ControlAffineSystem {
    pub fn new(name: impl Into<String>, dim: usize, drift: DriftFn, input: PolyField) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("system dimension must be positive".into()));
        }
        if input.dim() != dim {
            return Err(Error::Validation(format!(
                "input field has dimension {}, system has {dim}",
                input.dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            drift,
            input,
        })
    }

    /// Linear drift `f(x) = M x` given as row-major rows.
    pub fn linear(name: impl Into<String>, matrix: &[Vec<f64>], input: PolyField) -> Result<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("drift matrix must be square".into()));
        }
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("drift matrix has non-finite entries".into()));
        }
        let m: Vec<Vec<f64>> = matrix.to_vec();
        let drift: DriftFn = Arc::new(move |x, out| {
            for (o, row) in out.iter_mut().zip(&m) {
                *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        });
        Self::new(name, n, drift, input)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_field(&self) -> &PolyField {
        &self.input
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    pub fn input(&self, x: &[f64]) -> Vec<f64> {
        self.input.eval(x)
    }

    /// `f(x) + g(x) u` into `out`.
    pub fn rhs_into(&self, x: &[f64], u: f64, out: &mut [f64]) {
        self.drift_into(x, out);
        if u != 0.0 {
            for (o, p) in out.iter_mut().zip(self.input.components()) {
                if !p.is_zero() {
                    *o += p.eval(x) * u;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Pendulum,
    VanDerPol,
    Lorenz,
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "vanderpol" => Ok(Self::VanDerPol),
            "lorenz" => Ok(Self::Lorenz),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pendulum => "pendulum",
            Self::VanDerPol => "vanderpol",
            Self::Lorenz => "lorenz",
        })
    }
}

impl SystemKind {
    fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::Pendulum => &[("damping", 0.01)],
            Self::VanDerPol => &[("mu", 1.0)],
            Self::Lorenz => &[("rho", 28.0), ("sigma", 10.0), ("beta", 8.0 / 3.0)],
        }
    }
}

/// Builds one of the benchmark systems. The input always enters the second
/// state equation (`g = e₂`).
///
/// Parameters: pendulum `damping` (0.01), Van der Pol `mu` (1),
/// Lorenz `rho` (28), `sigma` (10), `beta` (8/3).
pub fn make_system(kind: SystemKind, params: &BTreeMap<String, f64>) -> Result<ControlAffineSystem> {
    let defaults = kind.defaults();
    for (k, v) in params {
        if !defaults.iter().any(|(name, _)| name == k) {
            return Err(Error::Config(format!("unknown parameter `{k}` for {kind}")));
        }
        if !v.is_finite() {
            return Err(Error::Validation(format!("parameter `{k}` is not finite")));
        }
    }
    let get = |name: &str| {
        params.get(name).copied().unwrap_or_else(|| {
            defaults
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .expect("default exists")
        })
    };
    let system = match kind {
        SystemKind::Pendulum => {
            let damping = get("damping");
            let drift: DriftFn = Arc::new(move |x, out| {
                out[0] = x[1];
                out[1] = damping * x[1] - x[0].sin();
            });
            ControlAffineSystem::new("pendulum", 2, drift, PolyField::unit(2, 1))?
        }
        SystemKind::VanDerPol => {
            let mu = get("mu");
            let drift: DriftFn = Arc::new(move |x, out| {
                out[0] = x[1];
                out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            });
            ControlAffineSystem::new("vanderpol", 2, drift, PolyField::unit(2, 1))?
        }
        SystemKind::Lorenz => {
            let (rho, sigma, beta) = (get("rho"), get("sigma"), get("beta"));
            let drift: DriftFn = Arc::new(move |x, out| {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            });
            ControlAffineSystem::new("lorenz", 3, drift, PolyField::unit(3, 1))?
        }
    };
    let f0 = system.drift(&vec![0.0; system.dim()]);
    debug_assert!(f0.iter().all(|v| v.abs() <= 1e-12));
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(kind: SystemKind) -> ControlAffineSystem {
        make_system(kind, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn pendulum_origin_is_equilibrium() {
        assert_eq!(defaults(SystemKind::Pendulum).drift(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn vanderpol_hand_substitution() {
        assert_eq!(defaults(SystemKind::VanDerPol).drift(&[1.0, 1.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn lorenz_hand_substitution() {
        let f = defaults(SystemKind::Lorenz).drift(&[1.0, 1.0, 1.0]);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 26.0);
        assert!((f[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn builtins_drift_vanishes_at_origin_and_input_is_e2() {
        for kind in [SystemKind::Pendulum, SystemKind::VanDerPol, SystemKind::Lorenz] {
            let s = defaults(kind);
            let zero = vec![0.0; s.dim()];
            assert!(s.drift(&zero).iter().all(|v| v.abs() <= 1e-12));
            let g = s.input(&[0.3; 3][..s.dim()]);
            let mut e2 = vec![0.0; s.dim()];
            e2[1] = 1.0;
            assert_eq!(g, e2);
        }
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!("duffing".parse::<SystemKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = BTreeMap::new();
        p.insert("rho".to_string(), f64::NAN);
        assert!(matches!(make_system(SystemKind::Lorenz, &p), Err(Error::Validation(_))));
        let mut p = BTreeMap::new();
        p.insert("omega".to_string(), 1.0);
        assert!(matches!(make_system(SystemKind::Pendulum, &p), Err(Error::Config(_))));
    }

    #[test]
    fn lorenz_parameters_override() {
        let mut p = BTreeMap::new();
        p.insert("rho".to_string(), 10.0);
        let f = make_system(SystemKind::Lorenz, &p).unwrap().drift(&[1.0, 1.0, 1.0]);
        assert_eq!(f[1], 8.0);
    }
}
