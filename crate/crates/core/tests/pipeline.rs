use std::path::Path;

use koopman_clf::pipeline::{self, LoopKind, RunConfig};
use koopman_clf::{
    build_b_exact, generate_snapshots, realify, BilinearModel, ControlAffineSystem, DriftBlock, Error, KoopmanModel,
    MonomialDictionary, PolyField, Polynomial, SamplingBox, SamplingMode, SnapshotMap, SnapshotSpec,
};

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    RunConfig::load(&path).unwrap()
}

#[test]
fn scalar_linear_generator_recovered() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline::identify(&cfg, dir.path()).unwrap();
    let lambdas = out.model.basis.eigenvalues();
    let closest = lambdas.iter().map(|l| (l.re + 1.0).abs()).fold(f64::INFINITY, f64::min);
    assert!(closest < 1e-4, "{lambdas:?}");
    assert!(!out.least_squares);
    assert_eq!(out.model.span_residual, 0.0);
    assert!(dir.path().join(pipeline::KOOPMAN_FILE).exists());
    let reloaded = pipeline::load_model(dir.path()).unwrap();
    assert_eq!(reloaded.a, out.model.a);
    assert_eq!(reloaded.b, out.model.b);
}

#[test]
fn pendulum_model_drops_constant_mode() {
    let cfg = config("pendulum");
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline::identify(&cfg, dir.path()).unwrap();
    assert_eq!(out.model.basis.full_dim(), 21);
    assert_eq!(out.model.dim(), 20);
    assert!(out.model.basis.constant_mode().is_some());
    assert_eq!(out.model.span_residual, 0.0);
}

/// `ẋ = −x + u x` lifts to `A = [−1]`, `B = [1]` with no input offset.
fn write_toy_model(dir: &Path) {
    let g = PolyField::new(vec![Polynomial::monomial(vec![1], 1.0)]);
    let system = ControlAffineSystem::linear("toy", &[vec![-1.0]], g.clone()).unwrap();
    let region = SamplingBox::symmetric(&[1.0]).unwrap();
    let spec = SnapshotSpec {
        mode: SamplingMode::Scatter { samples: 500 },
        map: SnapshotMap::ExactFlow,
        dt: 0.01,
        seed: 3,
    };
    let data = generate_snapshots(&system, &region, &spec).unwrap();
    let dict = MonomialDictionary::new(1, 1).unwrap();
    let k = KoopmanModel::fit(&data, &dict, 1e-10).unwrap();
    let basis = realify(&k.spectrum, &dict, 0.01, 1e-6).unwrap();
    let (b_full, r) = build_b_exact(&basis, &g).unwrap();
    let model = BilinearModel::assemble(basis, DriftBlock::Continuous, b_full, r).unwrap();
    assert!((model.a[(0, 0)] + 1.0).abs() < 1e-8);
    assert!((model.b[(0, 0)] - 1.0).abs() < 1e-8);
    assert!(model.input_offset[0].abs() < 1e-12);
    pipeline::write_json(&dir.join(pipeline::MODEL_FILE), &model.to_file()).unwrap();
}

#[test]
fn toy_design_saturates_at_c_max() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    write_toy_model(dir.path());
    let clf = pipeline::design(&cfg, dir.path()).unwrap();
    assert!((clf.p[0][0] - cfg.clf.c_max).abs() < 1e-5, "{:?}", clf.p);
    assert_eq!(clf.gamma, 2.0);
    assert_eq!(clf.attempts.len(), 1);
    assert_eq!(clf.certificate, "sampled");
    let back = pipeline::load_clf(dir.path()).unwrap();
    assert_eq!(back, clf);
}

#[test]
fn malformed_model_names_the_field() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    write_toy_model(dir.path());
    let path = dir.path().join(pipeline::MODEL_FILE);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"span_residual\"", "\"span_resid\"");
    std::fs::write(&path, text).unwrap();
    let err = pipeline::design(&cfg, dir.path()).unwrap_err();
    match err.root() {
        Error::Parse { message, .. } => assert!(message.contains("span_resid"), "{message}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn stages_need_their_inputs() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    for err in [
        pipeline::design(&cfg, dir.path()).unwrap_err(),
        pipeline::simulate(&cfg, dir.path()).unwrap_err(),
        pipeline::report(&cfg, dir.path()).unwrap_err(),
    ] {
        assert!(matches!(err.root(), Error::Dependency(_)), "{err}");
        assert!(matches!(err, Error::Stage { .. }));
    }
}

#[test]
fn gain_zero_divergence_is_flagged_not_fatal() {
    let cfg = config("linear_gain0");
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::run_all(&cfg, dir.path()).unwrap();
    let closed = &summary.loops[&LoopKind::Closed];
    assert_eq!(closed.diverged, vec![0]);
    assert_eq!(closed.converged, 1);
    assert!(summary.warnings.iter().any(|w| w.contains("trajectory 0")));
    let sim = pipeline::load_simulation(dir.path()).unwrap();
    let rec = sim
        .records
        .iter()
        .find(|r| r.kind == LoopKind::Closed && r.index == 0)
        .unwrap();
    assert!(rec.diverged);
    assert!(rec.final_time < cfg.simulate.t_final);
    assert!(dir.path().join(&rec.file).exists());
    let manifest: koopman_clf::RunManifest = pipeline::read_json(&dir.path().join(pipeline::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    assert!(manifest.warnings.iter().any(|w| w.contains("trajectory 0")));
    for stage in ["identify", "design", "simulate", "report"] {
        assert!(manifest.timings.contains_key(stage));
    }
}

#[test]
fn simulate_reruns_from_artifacts_alone() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_all(&cfg, dir.path()).unwrap();
    let first = std::fs::read(dir.path().join("traj/closed_000.csv")).unwrap();
    std::fs::remove_file(dir.path().join(pipeline::KOOPMAN_FILE)).unwrap();
    pipeline::simulate(&cfg, dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("traj/closed_000.csv")).unwrap(), first);
    let (header, rows) = pipeline::read_csv(&dir.path().join("overlay/overlay_000.csv")).unwrap();
    assert_eq!(header, ["t", "closed_x_1", "closed_V", "open_x_1", "open_V"]);
    assert_eq!(rows.len(), 501);
}

#[test]
fn closed_loop_v_column_decreases_on_linear_benchmark() {
    let cfg = config("linear");
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::run_all(&cfg, dir.path()).unwrap();
    let closed = &summary.loops[&LoopKind::Closed];
    assert_eq!(closed.v_violations, 0);
    assert_eq!(closed.converged, closed.runs);
    let (header, rows) = pipeline::read_csv(&dir.path().join("traj/closed_000.csv")).unwrap();
    assert_eq!(header, ["t", "x_1", "u", "V"]);
    assert_eq!(rows[0][1], 1.0);
}
