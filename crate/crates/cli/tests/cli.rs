use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn koopctl(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_koopctl"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("KOOPCTL_THREADS", t),
        None => cmd.env_remove("KOOPCTL_THREADS"),
    };
    cmd.output().unwrap()
}

fn stage(name: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        name,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    koopctl(&args, None)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("linear.json");
    for name in ["identify", "design", "simulate", "report"] {
        let o = stage(name, &cfg, dir.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
    for f in [
        "koopman.json",
        "model.json",
        "clf.json",
        "simulation.json",
        "summary.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(dir.path().join("traj/closed_001.csv").exists());
    assert!(dir.path().join("overlay/overlay_001.csv").exists());
}

#[test]
fn divergence_exit_code_and_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("linear_gain0.json");
    let o = stage("run", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let o = stage("simulate", &cfg, dir.path(), &["--lenient"]);
    assert_eq!(o.status.code(), Some(0));
    let o = stage("report", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning: closed-loop trajectory 0"));
}

#[test]
fn missing_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = stage("identify", &dir.path().join("nope.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn unknown_key_is_exit_2_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("linear.json")).unwrap()).unwrap();
    v["dictionary"]["degre"] = serde_json::json!(2);
    let text = v.to_string();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, text).unwrap();
    let o = stage("identify", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("degre"), "{}", stderr(&o));
}

#[test]
fn report_without_run_is_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = stage("report", &configs().join("linear.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(configs().join("linear.json")).unwrap()).unwrap();
    v["system"]["matrix"] = serde_json::json!([[-100.0]]);
    v["data"]["dt"] = serde_json::json!(1.0);
    let text = v.to_string();
    let cfg = dir.path().join("fast.json");
    std::fs::write(&cfg, &text).unwrap();
    let o = stage("identify", &cfg, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3), "{}\n{text}", stderr(&o));
    assert!(stderr(&o).starts_with("error: identify:"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let cfg = configs().join("linear.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: Option<&str>| {
        let args = ["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
        let o = koopctl(&args, threads);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    run(a.path(), Some("1"));
    run(b.path(), Some("3"));
    for f in [
        "traj/closed_000.csv",
        "traj/open_001.csv",
        "overlay/overlay_000.csv",
        "simulation.json",
        "model.json",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn bad_thread_count_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("linear.json");
    let args = [
        "identify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ];
    let o = koopctl(&args, Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KOOPCTL_THREADS"));
}
