//! Staged execution behind `koopctl`: identify, design, simulate, report.
//!
//! Every stage reads the run config plus the artifacts of earlier stages
//! from the output directory, so any stage can be re-run on its own.

mod artifacts;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use artifacts::*;
pub use config::*;

use crate::clf::{
    check_stabilizability, check_stabilizability_affine, lqr_reference, solve_clf_sdp, FeedbackLaw, SdpDiagnostics,
};
use crate::dynamics::{generate_snapshots, integrate, ControlAffineSystem, IntegrationOptions, Trajectory};
use crate::edmd::{KoopmanFile, KoopmanModel};
use crate::error::{Error, Result};
use crate::lifting::{build_b_exact, build_b_lsq, realify, BilinearModel, ModelFile};
use crate::linalg::{lambda_min, norm};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub edmd_residual: Option<f64>,
    pub edmd_rank: Option<usize>,
    pub span_residual: Option<f64>,
    pub input_matrix: Option<String>,
    pub lifted_dim: Option<usize>,
    pub sdp: Option<SdpDiagnostics>,
    pub gamma: Option<f64>,
    pub certificate: Option<String>,
    pub convergence_times: Option<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

fn update_manifest(
    cfg: &RunConfig,
    out: &Path,
    stage: &str,
    started: Instant,
    f: impl FnOnce(&mut RunManifest),
) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    let hash = cfg.hash();
    let mut m = match read_json::<RunManifest>(&path) {
        Ok(m) if m.config_hash == hash => m,
        _ => RunManifest {
            config_hash: hash,
            ..Default::default()
        },
    };
    f(&mut m);
    m.timings.insert(stage.to_string(), started.elapsed().as_secs_f64());
    write_json(&path, &m)
}

/// Output directory: the override if given, else `output` from the config.
pub fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| cfg.output.clone(), Path::to_path_buf)
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub koopman: KoopmanModel,
    pub model: BilinearModel,
    /// True when the input field left the dictionary span and `B` was fitted.
    pub least_squares: bool,
}

/// Snapshots, EDMD fit, realification and the lifted bilinear model.
pub fn identify(cfg: &RunConfig, out: &Path) -> Result<IdentifyOutcome> {
    let started = Instant::now();
    let run = || -> Result<IdentifyOutcome> {
        let system = cfg.system.build()?;
        let spec = cfg.data.spec()?;
        let data = generate_snapshots(&system, &cfg.data.region, &spec)?;
        let dict = cfg.dictionary.build(system.dim(), &cfg.data.region)?;
        let koopman = KoopmanModel::fit(&data, &dict, cfg.lifting.svd_threshold)?;
        let basis = realify(&koopman.spectrum, &dict, data.dt(), cfg.lifting.constant_mode_tol)?;
        let (b_full, resid, least_squares) = match build_b_exact(&basis, system.input_field()) {
            Ok((b, r)) => (b, r, false),
            Err(Error::SpanViolation { .. }) => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.data.seed ^ 0x5eed);
                let samples: Vec<Vec<f64>> = (0..cfg.lifting.lsq_samples)
                    .map(|_| cfg.data.region.sample(&mut rng))
                    .collect();
                let (b, r) = build_b_lsq(&basis, system.input_field(), &samples)?;
                (b, r, true)
            }
            Err(e) => return Err(e),
        };
        let model = BilinearModel::assemble(basis, cfg.lifting.drift_block, b_full, resid)?;
        write_json(&out.join(KOOPMAN_FILE), &koopman.to_file())?;
        write_json(&out.join(MODEL_FILE), &model.to_file())?;
        Ok(IdentifyOutcome {
            koopman,
            model,
            least_squares,
        })
    };
    let outcome = run().map_err(|e| e.in_stage("identify"))?;
    update_manifest(cfg, out, "identify", started, |m| {
        m.edmd_residual = Some(outcome.koopman.residual);
        m.edmd_rank = Some(outcome.koopman.rank);
        m.span_residual = Some(outcome.model.span_residual);
        m.input_matrix = Some(
            if outcome.least_squares {
                "least_squares"
            } else {
                "exact"
            }
            .into(),
        );
        m.lifted_dim = Some(outcome.model.dim());
    })
    .map_err(|e| e.in_stage("identify"))?;
    Ok(outcome)
}

pub fn load_model(out: &Path) -> Result<BilinearModel> {
    BilinearModel::from_file(read_json::<ModelFile>(&out.join(MODEL_FILE))?)
}

pub fn load_koopman(out: &Path) -> Result<KoopmanModel> {
    KoopmanModel::from_file(read_json::<KoopmanFile>(&out.join(KOOPMAN_FILE))?)
}

pub fn load_simulation(out: &Path) -> Result<SimulationFile> {
    read_json(&out.join(SIMULATION_FILE))
}

pub fn load_clf(out: &Path) -> Result<ClfFile> {
    read_json(&out.join(CLF_FILE))
}

/// Radius of the smallest ball holding the sublevel set of `V` through the
/// lifted simulation initial conditions. Inside it a decreasing `V` keeps
/// the lifted state.
pub fn required_radius(p: &Mat<f64>, lifted: &[Vec<f64>]) -> f64 {
    let vmax = lifted
        .iter()
        .map(|z| crate::linalg::quad_form(p.as_ref(), z))
        .fold(0.0, f64::max);
    (vmax / lambda_min(p.as_ref())).sqrt()
}

/// Runs the CLF program over the `γ` schedule until the sampled
/// stabilizability check passes, and writes the first passing design.
pub fn design(cfg: &RunConfig, out: &Path) -> Result<ClfFile> {
    let started = Instant::now();
    let run = || -> Result<ClfFile> {
        let model = load_model(out)?;
        let n_state = model.basis.dictionary().n();
        let lifted: Vec<Vec<f64>> = cfg
            .simulate
            .initial_conditions(n_state)?
            .iter()
            .map(|x| model.lift(x))
            .collect();
        let c = &cfg.clf;
        let mut attempts = Vec::new();
        for gamma in cfg.gamma_schedule() {
            let clf = solve_clf_sdp(model.a.as_ref(), model.b.as_ref(), gamma, c.c_min, c.c_max, &c.sdp)?;
            let radius = required_radius(&clf.p, &lifted);
            let check = check_stabilizability(
                clf.p.as_ref(),
                model.a.as_ref(),
                model.b.as_ref(),
                c.n_samples,
                c.tol,
                c.seed,
            );
            let affine = check_stabilizability_affine(
                clf.p.as_ref(),
                model.a.as_ref(),
                model.b.as_ref(),
                &model.input_offset,
                radius,
                c.n_samples,
                c.tol,
                c.seed,
            );
            attempts.push(DesignAttempt {
                gamma,
                t_opt: clf.t_opt,
                check: check.clone(),
                affine,
                required_radius: radius,
            });
            if check.passed {
                let file = ClfFile::from_clf(&clf, check, attempts);
                write_json(&out.join(CLF_FILE), &file)?;
                return Ok(file);
            }
        }
        let details = attempts
            .iter()
            .map(|a| format!("γ = {}: witness {:?}", a.gamma, a.check.witness))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Design {
            attempts: attempts.len(),
            details,
        })
    };
    let file = run().map_err(|e| e.in_stage("design"))?;
    update_manifest(cfg, out, "design", started, |m| {
        m.sdp = Some(file.diagnostics.clone());
        m.gamma = Some(file.gamma);
        m.certificate = Some(file.certificate.clone());
    })
    .map_err(|e| e.in_stage("design"))?;
    Ok(file)
}

/// Jacobian of the drift at the origin by central differences.
pub fn linearize(system: &ControlAffineSystem) -> Mat<f64> {
    let n = system.dim();
    let h = 1e-6;
    let mut j = Mat::<f64>::zeros(n, n);
    let mut x = vec![0.0; n];
    for k in 0..n {
        x[k] = h;
        let fp = system.drift(&x);
        x[k] = -h;
        let fm = system.drift(&x);
        x[k] = 0.0;
        for i in 0..n {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    j
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub file: SimulationFile,
    /// Closed-loop trajectories that hit the blow-up bound or stalled.
    pub diverged: Vec<usize>,
}

struct Run {
    traj: Trajectory,
    diverged: bool,
    stalled: bool,
}

fn run_one<F: Fn(&[f64]) -> f64>(
    system: &ControlAffineSystem,
    x0: &[f64],
    u: F,
    sim: &SimulateConfig,
    options: &IntegrationOptions,
) -> Result<Run> {
    match integrate(system, x0, u, sim.dt, sim.t_final, sim.method, options) {
        Ok(traj) => Ok(Run {
            traj,
            diverged: false,
            stalled: false,
        }),
        Err(Error::Divergence { partial, .. }) => Ok(Run {
            traj: *partial,
            diverged: true,
            stalled: false,
        }),
        Err(Error::Stalled {
            partial: Some(partial), ..
        }) => Ok(Run {
            traj: *partial,
            diverged: false,
            stalled: true,
        }),
        Err(e) => Err(e),
    }
}

/// Closed-loop, open-loop and (optionally) LQR runs from every initial
/// condition, one CSV per run.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<SimulationOutcome> {
    let started = Instant::now();
    let run = || -> Result<SimulationOutcome> {
        let model = Arc::new(load_model(out)?);
        let clf = load_clf(out)?.to_clf()?;
        let system = cfg.system.build()?;
        if model.basis.dictionary().n() != system.dim() {
            return Err(Error::Validation("model and system dimensions differ".into()));
        }
        let law = FeedbackLaw::new(cfg.clf.controller.clone(), &clf, model.clone())?;
        let sim = &cfg.simulate;
        let ics = sim.initial_conditions(system.dim())?;
        let lqr_gain = match &sim.lqr {
            Some(l) => {
                let a = linearize(&system);
                let b = system.input(&vec![0.0; system.dim()]);
                let q = crate::linalg::from_rows(&l.q)?;
                Some(lqr_reference(a.as_ref(), &b, q.as_ref(), l.r)?)
            }
            None => None,
        };
        let options = IntegrationOptions {
            blowup: sim.blowup,
            ..Default::default()
        };
        let mut jobs: Vec<(usize, LoopKind)> = Vec::new();
        for i in 0..ics.len() {
            jobs.push((i, LoopKind::Closed));
            jobs.push((i, LoopKind::Open));
            if lqr_gain.is_some() {
                jobs.push((i, LoopKind::Lqr));
            }
        }
        let runs: Vec<Result<(usize, LoopKind, Run, Vec<f64>)>> = jobs
            .par_iter()
            .map(|&(i, kind)| {
                let x0 = &ics[i];
                let r = match kind {
                    LoopKind::Closed => run_one(&system, x0, |x| law.state_feedback(x), sim, &options)?,
                    LoopKind::Open => run_one(&system, x0, |_| 0.0, sim, &options)?,
                    LoopKind::Lqr => {
                        let k = lqr_gain.as_ref().expect("lqr gain");
                        run_one(&system, x0, |x| -crate::linalg::dot(k, x), sim, &options)?
                    }
                };
                let v = r.traj.states().iter().map(|x| law.value(&model.lift(x))).collect();
                Ok((i, kind, r, v))
            })
            .collect();
        let traj_dir = out.join(TRAJ_DIR);
        std::fs::create_dir_all(&traj_dir)?;
        let mut records = Vec::with_capacity(runs.len());
        let mut diverged = Vec::new();
        for r in runs {
            let (i, kind, run, v) = r?;
            let name = format!("{}_{i:03}.csv", kind.label());
            write_atomic(&traj_dir.join(&name), trajectory_csv(&run.traj, &v).as_bytes())?;
            let final_state = run.traj.final_state().to_vec();
            if (run.diverged || run.stalled) && kind == LoopKind::Closed {
                diverged.push(i);
            }
            records.push(TrajectoryRecord {
                index: i,
                kind,
                file: format!("{TRAJ_DIR}/{name}"),
                x0: ics[i].clone(),
                final_time: run.traj.final_time(),
                final_norm: norm(&final_state),
                final_state,
                diverged: run.diverged,
                stalled: run.stalled,
                convergence_time: if run.diverged || run.stalled {
                    None
                } else {
                    convergence_time(&run.traj, sim.t_final)
                },
                v_violations: v_violations(&v),
            });
        }
        let file = SimulationFile {
            t_final: sim.t_final,
            dt: sim.dt,
            records,
        };
        write_json(&out.join(SIMULATION_FILE), &file)?;
        Ok(SimulationOutcome { file, diverged })
    };
    let outcome = run().map_err(|e| e.in_stage("simulate"))?;
    update_manifest(cfg, out, "simulate", started, |m| {
        m.convergence_times = Some(
            outcome
                .file
                .records
                .iter()
                .filter(|r| r.kind == LoopKind::Closed)
                .map(|r| r.convergence_time)
                .collect(),
        );
        m.warnings.retain(|w| !w.starts_with("closed-loop trajectory"));
        for i in &outcome.diverged {
            m.warnings
                .push(format!("closed-loop trajectory {i} diverged or stalled"));
        }
    })
    .map_err(|e| e.in_stage("simulate"))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub runs: usize,
    pub converged: usize,
    pub diverged: Vec<usize>,
    pub mean_convergence_time: Option<f64>,
    pub max_convergence_time: Option<f64>,
    pub max_final_norm: f64,
    pub v_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub loops: BTreeMap<LoopKind, LoopSummary>,
    /// Closed-loop minus LQR worst-case convergence time, when both converge.
    pub clf_vs_lqr: Option<f64>,
    pub warnings: Vec<String>,
}

fn summarize(records: &[&TrajectoryRecord]) -> LoopSummary {
    let times: Vec<f64> = records.iter().filter_map(|r| r.convergence_time).collect();
    LoopSummary {
        runs: records.len(),
        converged: times.len(),
        diverged: records
            .iter()
            .filter(|r| r.diverged || r.stalled)
            .map(|r| r.index)
            .collect(),
        mean_convergence_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        max_convergence_time: (times.len() == records.len() && !times.is_empty())
            .then(|| times.iter().cloned().fold(0.0, f64::max)),
        max_final_norm: records.iter().map(|r| r.final_norm).fold(0.0, f64::max),
        v_violations: records.iter().map(|r| r.v_violations).sum(),
    }
}

/// Merges the per-run CSVs of one initial condition on the common time grid:
/// `t` then `<kind>_x_i` and `<kind>_V` for every loop kind that ran.
fn overlay(out: &Path, records: &[&TrajectoryRecord]) -> Result<String> {
    use std::fmt::Write as _;
    let mut columns: Vec<String> = vec!["t".into()];
    let mut tables = Vec::new();
    for r in records {
        let (header, rows) = read_csv(&out.join(&r.file))?;
        for h in &header[1..] {
            if h != "u" {
                columns.push(format!("{}_{h}", r.kind.label()));
            }
        }
        tables.push((header, rows));
    }
    let len = tables.iter().map(|t| t.1.len()).max().unwrap_or(0);
    let mut text = columns.join(",");
    text.push('\n');
    for k in 0..len {
        let t = tables
            .iter()
            .find_map(|t| t.1.get(k).map(|row| row[0]))
            .unwrap_or(f64::NAN);
        let _ = write!(text, "{t:.16e}");
        for (header, rows) in &tables {
            for (c, h) in header.iter().enumerate().skip(1) {
                if h == "u" {
                    continue;
                }
                match rows.get(k) {
                    Some(row) => {
                        let _ = write!(text, ",{:.16e}", row[c]);
                    }
                    None => text.push(','),
                }
            }
        }
        text.push('\n');
    }
    Ok(text)
}

/// Aggregates a finished simulation into `summary.json` and one overlay CSV
/// per initial condition.
pub fn report(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let started = Instant::now();
    let run = || -> Result<Summary> {
        load_model(out)?;
        load_clf(out)?;
        let sim = load_simulation(out)?;
        let mut by_kind: BTreeMap<LoopKind, Vec<&TrajectoryRecord>> = BTreeMap::new();
        let mut by_index: BTreeMap<usize, Vec<&TrajectoryRecord>> = BTreeMap::new();
        for r in &sim.records {
            by_kind.entry(r.kind).or_default().push(r);
            by_index.entry(r.index).or_default().push(r);
        }
        let loops: BTreeMap<LoopKind, LoopSummary> = by_kind.iter().map(|(k, rs)| (*k, summarize(rs))).collect();
        let mut warnings = Vec::new();
        if let Some(c) = loops.get(&LoopKind::Closed) {
            for i in &c.diverged {
                warnings.push(format!("closed-loop trajectory {i} diverged or stalled"));
            }
            if c.v_violations > 0 {
                warnings.push(format!("{} closed-loop steps increased V", c.v_violations));
            }
        }
        let clf_vs_lqr = match (loops.get(&LoopKind::Closed), loops.get(&LoopKind::Lqr)) {
            (Some(c), Some(l)) => c.max_convergence_time.zip(l.max_convergence_time).map(|(a, b)| a - b),
            _ => None,
        };
        let dir = out.join(OVERLAY_DIR);
        std::fs::create_dir_all(&dir)?;
        for (i, rs) in &by_index {
            write_atomic(&dir.join(format!("overlay_{i:03}.csv")), overlay(out, rs)?.as_bytes())?;
        }
        let summary = Summary {
            loops,
            clf_vs_lqr,
            warnings,
        };
        write_json(&out.join(SUMMARY_FILE), &summary)?;
        Ok(summary)
    };
    let summary = run().map_err(|e| e.in_stage("report"))?;
    update_manifest(cfg, out, "report", started, |_| {}).map_err(|e| e.in_stage("report"))?;
    Ok(summary)
}

/// All four stages in order.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    identify(cfg, out)?;
    design(cfg, out)?;
    simulate(cfg, out)?;
    report(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_system, SystemKind};

    #[test]
    fn pendulum_linearization() {
        let s = make_system(SystemKind::Pendulum, &BTreeMap::new()).unwrap();
        let j = linearize(&s);
        let want = [[0.0, 1.0], [-1.0, 0.01]];
        for i in 0..2 {
            for k in 0..2 {
                assert!((j[(i, k)] - want[i][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn radius_covers_sublevel_set() {
        let p = faer::mat![[4.0, 0.0], [0.0, 1.0]];
        // V(z) = 4 through (1, 0); the sublevel set reaches ‖z‖ = 2 along e₂
        assert!((required_radius(&p, &[vec![1.0, 0.0], vec![0.0, 0.5]]) - 2.0).abs() < 1e-12);
        assert_eq!(required_radius(&p, &[]), 0.0);
    }

    #[test]
    fn report_on_empty_dir_is_dependency_error() {
        let cfg = RunConfig::from_json(&config::tests::pendulum_json()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = report(&cfg, dir.path()).unwrap_err();
        assert!(matches!(err.root(), Error::Dependency(_)));
        assert_eq!(err.exit_code(), 2);
    }
}
