use std::path::Path;
use std::process::{Command, Output};

use vasckernel::scenarios::YSHAPE;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vasckernel"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn small_scenario(dir: &Path) -> String {
    let text = YSHAPE
        .replace("samples = 200", "samples = 4")
        .replace("nodes = 100\nsnapshots = 160", "nodes = 5\nsnapshots = 16")
        .replace("max_dx = 1.5e-3", "max_dx = 4e-3");
    std::fs::write(dir.join("small.toml"), text).unwrap();
    "small.toml".into()
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["simulate", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config not found"));
}

#[test]
fn unmet_periodicity_exits_3_with_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path());
    let out = bin(&["simulate", &cfg, "--cycles", "1", "--periodicity-tol", "1e-9"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("residual history ["), "{err}");
}

#[test]
fn ensemble_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scenario(dir.path());
    assert_eq!(bin(&["ensemble", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn help_documents_formats() {
    let out = bin(&["--help"], Path::new("."));
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["vessel_id,x,t,u,A", "vessel_id,x,t,mean,std", "magic \"HKRN\"", "crc32"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn validate_passes() {
    let out = bin(&["validate"], Path::new("."));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_scenario(d);
    let run = |args: &[&str]| {
        let out = bin(args, d);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };

    run(&["simulate", &cfg, "--out", "sim.csv"]);
    assert!(std::fs::read_to_string(d.join("sim.log")).unwrap().contains("periodicity residual"));
    let sim = std::fs::read_to_string(d.join("sim.csv")).unwrap();
    assert!(sim.starts_with("vessel_id,x,t,u,A\n"));
    assert_eq!(sim.lines().count(), 1 + 3 * 5 * 16);

    run(&["ensemble", &cfg, "--seed", "3", "--out", "ens"]);
    for f in ["manifest.toml", "snapshots.hkrn", "scenario.toml"] {
        assert!(d.join("ens").join(f).exists(), "{f}");
    }
    let first = std::fs::read(d.join("ens/snapshots.hkrn")).unwrap();
    run(&["ensemble", &cfg, "--seed", "3", "--out", "ens2"]);
    assert_eq!(first, std::fs::read(d.join("ens2/snapshots.hkrn")).unwrap());

    let built = run(&["build-kernel", "ens", "--rank", "3", "--keep-right-vectors"]);
    assert!(built.contains("rank r = 3"), "{built}");
    let spectrum = std::fs::read_to_string(d.join("ens/spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("index,sigma,lambda,energy\n"));
    assert_eq!(spectrum.lines().count(), 1 + 4);

    run(&[
        "measure",
        &cfg,
        "--layout",
        "case2",
        "--dt",
        "0.1",
        "--out",
        "meas.csv",
        "--truth",
        "truth.csv",
        "--queries",
        "q.csv",
    ]);
    let predicted = run(&["predict", "ens/kernel.hkrn", "meas.csv", "q.csv", "--out", "post.csv"]);
    assert!(predicted.contains("fitted noise std"), "{predicted}");
    let post = std::fs::read_to_string(d.join("post.csv")).unwrap();
    assert!(post.starts_with("vessel_id,x,t,mean,std\n"));
    assert_eq!(post.lines().count(), 1 + 3 * 16);

    run(&[
        "predict",
        "ens/kernel.hkrn",
        "meas.csv",
        "q.csv",
        "--noise-std",
        "0.01",
        "--out",
        "post2.csv",
        "--plot",
        "post2.svg",
    ]);
    assert!(std::fs::read_to_string(d.join("post2.svg")).unwrap().starts_with("<svg"));
    run(&["plot", "post.csv", "truth.csv", "--vessel", "2", "--x", "0.0035", "--out", "p.svg"]);
    let svg = std::fs::read_to_string(d.join("p.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray"));
}

#[test]
fn corrupted_kernel_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("k.hkrn"), b"HKRN garbage").unwrap();
    std::fs::write(d.join("m.csv"), "vessel_id,x,t,u\n1,0,0,1\n").unwrap();
    std::fs::write(d.join("q.csv"), "vessel_id,x,t\n1,0,0\n").unwrap();
    let out = bin(&["predict", "k.hkrn", "m.csv", "q.csv"], d);
    assert_eq!(out.status.code(), Some(2));
}
