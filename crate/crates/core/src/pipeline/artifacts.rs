use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clf::{QuadraticClf, SdpDiagnostics, StabilizabilityReport};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};

pub const KOOPMAN_FILE: &str = "koopman.json";
pub const MODEL_FILE: &str = "model.json";
pub const CLF_FILE: &str = "clf.json";
pub const SIMULATION_FILE: &str = "simulation.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJ_DIR: &str = "traj";
pub const OVERLAY_DIR: &str = "overlay";

/// Writes through a sibling temp file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Dependency(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}

/// One `γ` tried by the design stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignAttempt {
    pub gamma: f64,
    pub t_opt: f64,
    pub check: StabilizabilityReport,
    /// Ray analysis including the input offset. Its `radius` is where the
    /// input first loses authority; recorded, not enforced.
    pub affine: StabilizabilityReport,
    /// Radius of the lifted region reached from the simulation initial
    /// conditions.
    pub required_radius: f64,
}

/// JSON layout of the designed CLF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfFile {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub c_min: f64,
    pub c_max: f64,
    pub gamma: f64,
    pub t_opt: f64,
    pub diagnostics: SdpDiagnostics,
    pub certificate: String,
    pub check: StabilizabilityReport,
    pub attempts: Vec<DesignAttempt>,
}

impl ClfFile {
    pub fn to_clf(&self) -> Result<QuadraticClf> {
        let p = from_rows(&self.p)?;
        if p.nrows() != p.ncols() {
            return Err(Error::Validation("P must be square".into()));
        }
        Ok(QuadraticClf {
            p,
            c_min: self.c_min,
            c_max: self.c_max,
            gamma: self.gamma,
            t_opt: self.t_opt,
            diagnostics: self.diagnostics.clone(),
        })
    }

    pub fn from_clf(clf: &QuadraticClf, check: StabilizabilityReport, attempts: Vec<DesignAttempt>) -> Self {
        Self {
            p: to_rows(clf.p.as_ref()),
            c_min: clf.c_min,
            c_max: clf.c_max,
            gamma: clf.gamma,
            t_opt: clf.t_opt,
            diagnostics: clf.diagnostics.clone(),
            certificate: check.certificate.clone(),
            check,
            attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Closed,
    Open,
    Lqr,
}

impl LoopKind {
    pub fn label(self) -> &'static str {
        match self {
            LoopKind::Closed => "closed",
            LoopKind::Open => "open",
            LoopKind::Lqr => "lqr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub kind: LoopKind,
    pub file: String,
    pub x0: Vec<f64>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub final_norm: f64,
    pub diverged: bool,
    /// The adaptive integrator gave up before `t_final`.
    pub stalled: bool,
    /// First grid time after which `‖x‖ < 0.05` holds to the end.
    pub convergence_time: Option<f64>,
    /// Steps with `V(t_{k+1}) > V(t_k) + 1e-6 (1 + V(t_k))`.
    pub v_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    pub t_final: f64,
    pub dt: f64,
    pub records: Vec<TrajectoryRecord>,
}

pub const CONVERGENCE_RADIUS: f64 = 0.05;
pub const V_TOLERANCE: f64 = 1e-6;

pub fn convergence_time(traj: &Trajectory, t_final: f64) -> Option<f64> {
    let states = traj.states();
    if traj.final_time() + 1e-9 * t_final.max(1.0) < t_final {
        return None;
    }
    let mut first = None;
    for (k, x) in states.iter().enumerate().rev() {
        if crate::linalg::norm(x) < CONVERGENCE_RADIUS {
            first = Some(traj.times()[k]);
        } else {
            break;
        }
    }
    first
}

pub fn v_violations(v: &[f64]) -> usize {
    v.windows(2)
        .filter(|w| !(w[1] <= w[0] + V_TOLERANCE * (1.0 + w[0])))
        .count()
}

/// `t, x_1..x_n, u, V` with 17 significant digits.
pub fn trajectory_csv(traj: &Trajectory, v: &[f64]) -> String {
    let n = traj.dim();
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    out.push_str(",u,V\n");
    for k in 0..traj.len() {
        let _ = write!(out, "{:.16e}", traj.times()[k]);
        for x in &traj.states()[k] {
            let _ = write!(out, ",{x:.16e}");
        }
        let _ = writeln!(out, ",{:.16e},{:.16e}", traj.inputs()[k], v[k]);
    }
    out
}

/// Parsed trajectory CSV: header and numeric rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::Dependency(path.to_path_buf()));
    }
    let parse_err = |message: String| Error::Parse {
        what: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .deserialize::<Vec<f64>>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(e.to_string()))?;
    Ok((header, rows))
}
