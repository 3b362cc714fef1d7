use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clf::{ControllerSpec, SdpOptions};
use crate::dynamics::{
    make_system, ControlAffineSystem, IntegrationMethod, SamplingBox, SamplingMode, SnapshotMap, SnapshotSpec,
    SystemKind,
};
use crate::edmd::MonomialDictionary;
use crate::error::{Error, Result};
use crate::lifting::DriftBlock;
use crate::poly::PolyField;

/// One JSON document driving every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub data: DataConfig,
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub lifting: LiftingConfig,
    #[serde(default)]
    pub clf: ClfConfig,
    pub simulate: SimulateConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

/// A built-in system by name, or `linear` with an explicit drift matrix and
/// a constant input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<ControlAffineSystem> {
        if self.name == "linear" {
            let (Some(m), Some(g)) = (&self.matrix, &self.input) else {
                return Err(Error::Config("linear system needs `matrix` and `input`".into()));
            };
            if !self.params.is_empty() {
                return Err(Error::Config("linear system takes no `params`".into()));
            }
            if g.len() != m.len() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(
                    "input vector must be finite and match the matrix".into(),
                ));
            }
            return ControlAffineSystem::linear("linear", m, PolyField::constant(g));
        }
        if self.matrix.is_some() || self.input.is_some() {
            return Err(Error::Config(format!(
                "`matrix`/`input` only apply to linear systems, not {}",
                self.name
            )));
        }
        make_system(SystemKind::from_str(&self.name)?, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Scatter,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub mode: DataMode,
    #[serde(rename = "box")]
    pub region: SamplingBox,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub map: SnapshotMap,
    /// Scatter mode: number of pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Trajectory mode: number of initial conditions (default 100).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

impl DataConfig {
    pub fn spec(&self) -> Result<SnapshotSpec> {
        let mode = match self.mode {
            DataMode::Scatter => {
                if self.n_traj.is_some() || self.t_final.is_some() || self.stride.is_some() {
                    return Err(Error::Config("scatter mode takes only `samples`".into()));
                }
                SamplingMode::Scatter {
                    samples: self
                        .samples
                        .ok_or_else(|| Error::Config("scatter mode needs `samples`".into()))?,
                }
            }
            DataMode::Trajectory => {
                if self.samples.is_some() {
                    return Err(Error::Config("trajectory mode does not take `samples`".into()));
                }
                SamplingMode::Trajectory {
                    n_traj: self.n_traj.unwrap_or(100),
                    t_final: self
                        .t_final
                        .ok_or_else(|| Error::Config("trajectory mode needs `t_final`".into()))?,
                    stride: self.stride.unwrap_or(1),
                }
            }
        };
        let spec = SnapshotSpec {
            mode,
            map: self.map,
            dt: self.dt,
            seed: self.seed,
        };
        spec.validate()?;
        self.region.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    #[serde(rename = "D")]
    pub degree: u32,
    /// Evaluate monomials of `x_i / s_i` with `s_i` the half-width of the
    /// data box along axis `i`.
    #[serde(default)]
    pub normalize: bool,
}

impl DictionaryConfig {
    pub fn build(&self, n: usize, region: &SamplingBox) -> Result<MonomialDictionary> {
        let d = MonomialDictionary::new(n, self.degree)?;
        if self.normalize {
            d.with_scale(region.max_abs())
        } else {
            Ok(d)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftingConfig {
    pub svd_threshold: f64,
    pub constant_mode_tol: f64,
    pub drift_block: DriftBlock,
    /// Sample count for the least-squares input matrix fallback.
    pub lsq_samples: usize,
}

impl Default for LiftingConfig {
    fn default() -> Self {
        Self {
            svd_threshold: 1e-10,
            constant_mode_tol: 1e-6,
            drift_block: DriftBlock::Continuous,
            lsq_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfConfig {
    pub gamma: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub controller: ControllerSpec,
    pub n_samples: usize,
    pub tol: f64,
    pub max_attempts: usize,
    pub seed: u64,
    pub sdp: SdpOptions,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            c_min: 0.1,
            c_max: 100.0,
            controller: ControllerSpec::default(),
            n_samples: 10_000,
            tol: 1e-8,
            max_attempts: 8,
            seed: 0,
            sdp: SdpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrConfig {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_conditions: Option<Vec<Vec<f64>>>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub region: Option<SamplingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default)]
    pub method: IntegrationMethod,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrConfig>,
}

fn default_blowup() -> f64 {
    1e6
}

impl SimulateConfig {
    pub fn initial_conditions(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        use rand::SeedableRng;
        let ics = match (&self.initial_conditions, &self.region) {
            (Some(ics), None) => {
                if self.count.is_some() {
                    return Err(Error::Config("`count` only applies with `box`".into()));
                }
                ics.clone()
            }
            (None, Some(region)) => {
                region.validate()?;
                let count = self
                    .count
                    .ok_or_else(|| Error::Config("simulation `box` needs `count`".into()))?;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                (0..count).map(|_| region.sample(&mut rng)).collect()
            }
            _ => {
                return Err(Error::Config(
                    "simulation needs exactly one of `initial_conditions` or `box`".into(),
                ))
            }
        };
        if ics.is_empty() {
            return Err(Error::Validation("no initial conditions".into()));
        }
        for (i, x) in ics.iter().enumerate() {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("initial condition {i} is malformed")));
            }
        }
        Ok(ics)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "run config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Dependency(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks every value the stages will use, before any of them runs.
    pub fn validate(&self) -> Result<()> {
        let system = self.system.build()?;
        let n = system.dim();
        if self.data.region.dim() != n {
            return Err(Error::Validation(format!(
                "data box has dimension {}, system has {n}",
                self.data.region.dim()
            )));
        }
        self.data.spec()?;
        self.dictionary.build(n, &self.data.region)?;
        let l = &self.lifting;
        if !(l.svd_threshold > 0.0 && l.svd_threshold < 1.0) {
            return Err(Error::Validation("svd_threshold must lie in (0, 1)".into()));
        }
        if !(l.constant_mode_tol >= 0.0 && l.constant_mode_tol.is_finite()) {
            return Err(Error::Validation("constant_mode_tol must be non-negative".into()));
        }
        let c = &self.clf;
        if !(c.gamma >= 0.0 && c.gamma.is_finite()) {
            return Err(Error::Validation("gamma must be non-negative".into()));
        }
        if !(0.0 < c.c_min && c.c_min < c.c_max && c.c_max.is_finite()) {
            return Err(Error::Validation("need 0 < c_min < c_max".into()));
        }
        if !(c.controller.gain >= 0.0 && c.controller.gain.is_finite()) {
            return Err(Error::Validation("controller gain must be non-negative".into()));
        }
        if c.max_attempts == 0 || !(c.tol >= 0.0) {
            return Err(Error::Validation("max_attempts must be ≥ 1 and tol ≥ 0".into()));
        }
        let s = &self.simulate;
        if !(s.dt > 0.0 && s.t_final >= s.dt && s.t_final.is_finite()) {
            return Err(Error::Validation("simulation needs dt > 0 and t_final ≥ dt".into()));
        }
        if !(s.blowup > 0.0) {
            return Err(Error::Validation("blowup must be positive".into()));
        }
        s.initial_conditions(n)?;
        if let Some(lqr) = &s.lqr {
            if lqr.q.len() != n || lqr.q.iter().any(|r| r.len() != n) || !(lqr.r > 0.0) {
                return Err(Error::Validation(format!("LQR needs an {n}×{n} Q and R > 0")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn gamma_schedule(&self) -> Vec<f64> {
        let mut out = vec![self.clf.gamma];
        for g in crate::clf::GAMMA_SCHEDULE {
            if !out.contains(&g) {
                out.push(g);
            }
        }
        out.truncate(self.clf.max_attempts);
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn pendulum_json() -> String {
        r#"{
            "system": {"name": "pendulum"},
            "data": {"mode": "trajectory", "box": {"lower": [-1, -1], "upper": [1, 1]},
                     "dt": 0.01, "seed": 1, "n_traj": 5, "t_final": 1.0},
            "dictionary": {"D": 3},
            "simulate": {"box": {"lower": [-1, -1], "upper": [1, 1]}, "count": 3,
                         "t_final": 1.0, "dt": 0.01}
        }"#
        .to_string()
    }

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_json(&pendulum_json()).unwrap();
        assert_eq!(c.clf.gamma, 2.0);
        assert_eq!(c.clf.c_max, 100.0);
        assert_eq!(c.gamma_schedule(), vec![2.0, 4.0, 1.0, 8.0, 0.5, 16.0, 0.25, 32.0]);
        assert_eq!(c.simulate.initial_conditions(2).unwrap().len(), 3);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = pendulum_json().replace("\"dictionary\": {\"D\": 3}", "\"dictionary\": {\"D\": 3, \"bogus\": 1}");
        match RunConfig::from_json(&text) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("bogus")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_system_is_config_error() {
        let text = pendulum_json().replace("pendulum", "duffing");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn custom_gamma_leads_schedule() {
        let mut c = RunConfig::from_json(&pendulum_json()).unwrap();
        c.clf.gamma = 3.0;
        c.clf.max_attempts = 3;
        assert_eq!(c.gamma_schedule(), vec![3.0, 2.0, 4.0]);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let text = pendulum_json().replace(
            r#""box": {"lower": [-1, -1], "upper": [1, 1]},
                     "dt""#,
            r#""box": {"lower": [-1], "upper": [1]},
                     "dt""#,
        );
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Validation(_))));
    }
}
