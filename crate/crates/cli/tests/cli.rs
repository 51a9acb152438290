use std::path::Path;
use std::process::{Command, Output};

fn reefsfm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reefsfm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 6] = [
    "--set",
    "synth.camera.width=96",
    "--set",
    "synth.camera.height=60",
    "--set",
    "synth.trajectory.frame_count=8",
];

#[test]
fn generate_then_run() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = reefsfm(tmp.path(), &[&["generate", "--dataset", "ds"][..], &SMALL].concat());
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(tmp.path().join("ds/dataset.json").is_file());
    // a second generate without --force is a config error
    let again = reefsfm(tmp.path(), &[&["generate", "--dataset", "ds"][..], &SMALL].concat());
    assert_eq!(again.status.code(), Some(2));

    let run = reefsfm(tmp.path(), &[&["run", "--dataset", "ds", "--output", "out", "--threads", "2"][..], &SMALL].concat());
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["cloud.ply", "manifest.json", "metrics.json", "cover.csv", "ortho_class.png", "config.toml"] {
        assert!(tmp.path().join("out").join(f).is_file(), "missing {f}");
    }

    let eval = reefsfm(tmp.path(), &[&["eval", "--dataset", "ds", "--output", "out"][..], &SMALL].concat());
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(metrics["point_count"].as_u64().unwrap() > 0);
}

#[test]
fn bad_input_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(reefsfm(tmp.path(), &["run", "--set", "no_equals_sign"]).status.code(), Some(2));
    assert_eq!(reefsfm(tmp.path(), &["run", "--set", "ortho.cell_size=-1"]).status.code(), Some(2));
    assert_eq!(reefsfm(tmp.path(), &["run", "--dataset", "missing"]).status.code(), Some(2));
    assert_eq!(reefsfm(tmp.path(), &["verify", "--suite", "everything"]).status.code(), Some(2));
}

#[test]
fn verify_geometry_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = reefsfm(tmp.path(), &["verify", "--suite", "geometry", "--output", "v"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("v/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}
