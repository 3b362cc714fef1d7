use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::Rk4;
use super::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::linalg::norm;

const MAX_FLOW_SUBSTEP: f64 = 1e-3;
const BLOWUP: f64 = 1e6;

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Symmetric box `[-r_i, r_i]`.
    pub fn symmetric(radii: &[f64]) -> Result<Self> {
        Self::new(radii.iter().map(|r| -r).collect(), radii.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::Validation(
                "sampling box bounds must have equal, nonzero length".into(),
            ));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Validation(format!(
                    "sampling box is degenerate along axis {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Per-axis `max(|lower_i|, |upper_i|)`.
    pub fn max_abs(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMap {
    /// `y = x + f(x) dt`.
    Euler,
    /// `y = φ_dt(x)` of the uncontrolled drift.
    #[default]
    ExactFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplingMode {
    /// Independent uniform pairs.
    Scatter { samples: usize },
    /// Uniform initial conditions, each run for `t_final` and sliced into
    /// consecutive pairs; every `stride`-th pair is kept.
    Trajectory {
        n_traj: usize,
        t_final: f64,
        #[serde(default = "one")]
        stride: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSpec {
    pub mode: SamplingMode,
    pub map: SnapshotMap,
    pub dt: f64,
    pub seed: u64,
}

impl SnapshotSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!(
                "snapshot dt must be positive, got {}",
                self.dt
            )));
        }
        match self.mode {
            SamplingMode::Scatter { samples: 0 } => {
                Err(Error::Validation("scatter mode needs at least one sample".into()))
            }
            SamplingMode::Trajectory {
                n_traj,
                t_final,
                stride,
            } => {
                if n_traj == 0 || stride == 0 {
                    return Err(Error::Validation("trajectory mode needs n_traj, stride ≥ 1".into()));
                }
                if !(t_final >= self.dt && t_final.is_finite()) {
                    return Err(Error::Validation(format!(
                        "trajectory t_final = {t_final} must be at least dt = {}",
                        self.dt
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Paired samples `(x_i, y_i)` stored as flat row-major arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    n: usize,
    dt: f64,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SnapshotDataset {
    pub fn new(n: usize, dt: f64, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("dataset dimension must be positive".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Validation(format!("dataset dt must be positive, got {dt}")));
        }
        if x.len() != y.len() || !x.len().is_multiple_of(n) {
            return Err(Error::Validation("X and Y must have identical shape".into()));
        }
        if x.is_empty() {
            return Err(Error::Validation("dataset needs at least one pair".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Validation("dataset contains non-finite entries".into()));
        }
        Ok(Self { n, dt, x, y })
    }

    pub fn from_pairs(dt: f64, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        let n = xs.first().map_or(0, Vec::len);
        if xs.len() != ys.len() || xs.iter().chain(ys).any(|v| v.len() != n) {
            return Err(Error::Validation("X and Y must have identical shape".into()));
        }
        Self::new(n, dt, xs.concat(), ys.concat())
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.y[i * self.n..(i + 1) * self.n]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.x.len() * 48 + 32);
        let _ = writeln!(out, "dt={:.16e}", self.dt);
        for i in 0..self.len() {
            let row: Vec<String> = self.x(i).iter().chain(self.y(i)).map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            what: "snapshot CSV".into(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
        let dt = header
            .trim()
            .strip_prefix("dt=")
            .ok_or_else(|| parse_err("first line must be `dt=<value>`".into()))?
            .parse::<f64>()
            .map_err(|e| parse_err(format!("dt: {e}")))?;
        let mut width = None;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("row {}: {e}", lineno + 1)))?;
            let w = *width.get_or_insert(vals.len());
            if vals.len() != w || w % 2 != 0 || w == 0 {
                return Err(parse_err(format!("row {} has {} columns", lineno + 1, vals.len())));
            }
            x.extend_from_slice(&vals[..w / 2]);
            y.extend_from_slice(&vals[w / 2..]);
        }
        let n = width.ok_or_else(|| parse_err("no data rows".into()))? / 2;
        Self::new(n, dt, x, y)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Dependency(path.to_path_buf()));
        }
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

fn euler_step(system: &ControlAffineSystem, x: &[f64], dt: f64) -> Vec<f64> {
    let f = system.drift(x);
    x.iter().zip(&f).map(|(a, b)| a + b * dt).collect()
}

/// Flow of the drift over `dt` by RK4 with substeps no longer than 1e-3.
pub(crate) fn drift_flow(system: &ControlAffineSystem, x: &[f64], dt: f64, rk: &mut Rk4) -> Vec<f64> {
    let sub = ((dt / MAX_FLOW_SUBSTEP) - 1e-9).ceil().max(1.0) as usize;
    let h = dt / sub as f64;
    let mut y = x.to_vec();
    let rhs = |s: &[f64], out: &mut [f64]| system.drift_into(s, out);
    for _ in 0..sub {
        rk.step(&rhs, &mut y, h);
    }
    y
}

/// Draws snapshot pairs. Initial points come from a seeded ChaCha8 stream in
/// a fixed order; the images are computed in parallel, so the output is
/// reproducible bit for bit.
pub fn generate_snapshots(
    system: &ControlAffineSystem,
    region: &SamplingBox,
    spec: &SnapshotSpec,
) -> Result<SnapshotDataset> {
    region.validate()?;
    spec.validate()?;
    let n = system.dim();
    if region.dim() != n {
        return Err(Error::Validation(format!(
            "sampling box has dimension {}, system has {n}",
            region.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = spec.dt;
    let map = |x: &[f64], rk: &mut Rk4| match spec.map {
        SnapshotMap::Euler => euler_step(system, x, dt),
        SnapshotMap::ExactFlow => drift_flow(system, x, dt, rk),
    };
    match spec.mode {
        SamplingMode::Scatter { samples } => {
            let xs: Vec<Vec<f64>> = (0..samples).map(|_| region.sample(&mut rng)).collect();
            let ys: Vec<Vec<f64>> = xs.par_iter().map_init(|| Rk4::new(n), |rk, x| map(x, rk)).collect();
            SnapshotDataset::from_pairs(dt, &xs, &ys)
        }
        SamplingMode::Trajectory {
            n_traj,
            t_final,
            stride,
        } => {
            let starts: Vec<Vec<f64>> = (0..n_traj).map(|_| region.sample(&mut rng)).collect();
            let steps = (t_final / dt).round() as usize;
            let runs: Vec<(Vec<f64>, Vec<f64>)> = starts
                .par_iter()
                .map(|x0| {
                    let mut rk = Rk4::new(n);
                    let mut xs = Vec::with_capacity(n * steps / stride + n);
                    let mut ys = Vec::with_capacity(n * steps / stride + n);
                    let mut x = x0.clone();
                    for k in 0..steps {
                        let next = map(&x, &mut rk);
                        let r = norm(&next);
                        if !r.is_finite() || r > BLOWUP {
                            break;
                        }
                        if k % stride == 0 {
                            xs.extend_from_slice(&x);
                            ys.extend_from_slice(&next);
                        }
                        x = next;
                    }
                    (xs, ys)
                })
                .collect();
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (xs, ys) in runs {
                x.extend(xs);
                y.extend(ys);
            }
            SnapshotDataset::new(n, dt, x, y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyField;

    fn decay() -> ControlAffineSystem {
        ControlAffineSystem::linear("decay", &[vec![-1.0]], PolyField::constant(&[1.0])).unwrap()
    }

    fn one_point_box() -> SamplingBox {
        SamplingBox::new(vec![1.0], vec![1.0 + 1e-14]).unwrap()
    }

    fn spec(map: SnapshotMap) -> SnapshotSpec {
        SnapshotSpec {
            mode: SamplingMode::Scatter { samples: 3 },
            map,
            dt: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn zero_drift_images_equal_preimages() {
        let s = ControlAffineSystem::linear("still", &[vec![0.0, 0.0], vec![0.0, 0.0]], PolyField::unit(2, 1)).unwrap();
        let b = SamplingBox::symmetric(&[1.0, 2.0]).unwrap();
        for map in [SnapshotMap::Euler, SnapshotMap::ExactFlow] {
            let d = generate_snapshots(&s, &b, &spec(map)).unwrap();
            for i in 0..d.len() {
                assert_eq!(d.x(i), d.y(i));
            }
        }
    }

    #[test]
    fn euler_step_matches_formula() {
        let d = generate_snapshots(&decay(), &one_point_box(), &spec(SnapshotMap::Euler)).unwrap();
        assert!((d.y(0)[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn exact_flow_matches_exponential() {
        let d = generate_snapshots(&decay(), &one_point_box(), &spec(SnapshotMap::ExactFlow)).unwrap();
        assert!((d.y(0)[0] - (-0.1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let b = SamplingBox::symmetric(&[1.0]).unwrap();
        let mut sp = spec(SnapshotMap::ExactFlow);
        sp.mode = SamplingMode::Trajectory {
            n_traj: 5,
            t_final: 1.0,
            stride: 1,
        };
        let a = generate_snapshots(&decay(), &b, &sp).unwrap();
        let c = generate_snapshots(&decay(), &b, &sp).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.len(), 50);
        for i in 0..9 {
            assert_eq!(a.y(i), a.x(i + 1));
        }
    }

    #[test]
    fn stride_subsamples_pairs() {
        let b = SamplingBox::symmetric(&[1.0]).unwrap();
        let mut sp = spec(SnapshotMap::Euler);
        sp.mode = SamplingMode::Trajectory {
            n_traj: 2,
            t_final: 1.0,
            stride: 3,
        };
        assert_eq!(generate_snapshots(&decay(), &b, &sp).unwrap().len(), 8);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(SamplingBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(SamplingBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let b = SamplingBox::symmetric(&[1.0, 3.0]).unwrap();
        let s = ControlAffineSystem::linear("rot", &[vec![0.0, 1.0], vec![-1.0, 0.0]], PolyField::unit(2, 1)).unwrap();
        let d = generate_snapshots(&s, &b, &spec(SnapshotMap::ExactFlow)).unwrap();
        let text = d.to_csv_string();
        assert!(text.starts_with("dt=1.0000000000000001e-1\n"));
        assert_eq!(SnapshotDataset::from_csv_str(&text).unwrap(), d);
    }

    #[test]
    fn csv_rejects_malformed() {
        assert!(SnapshotDataset::from_csv_str("").is_err());
        assert!(SnapshotDataset::from_csv_str("x=1\n1,2\n").is_err());
        assert!(SnapshotDataset::from_csv_str("dt=0.1\n1,2,3\n").is_err());
        assert!(SnapshotDataset::from_csv_str("dt=0.1\n1,2\n1,2,3,4\n").is_err());
    }
}
