use std::collections::BTreeMap;
use std::path::Path;

use reefsfm::pipeline::{
    generate_command, generate_dataset, load_dataset, run_pipeline, EstimatorBackend, PipelineConfig,
};
use reefsfm::Error;

fn small(root: &Path, frames: usize) -> PipelineConfig {
    let mut c = PipelineConfig {
        dataset: root.join("dataset"),
        output: root.join("out"),
        ..Default::default()
    };
    c.synth.camera.width = 96;
    c.synth.camera.height = 60;
    c.synth.trajectory.frame_count = frames;
    c
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn default_generation_writes_two_hundred_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig {
        dataset: tmp.path().join("ds"),
        ..Default::default()
    };
    generate_command(&cfg, false).unwrap();
    let ds = load_dataset(&cfg.dataset).unwrap();
    assert_eq!(ds.frames.len(), 200);
    assert_eq!(ds.depths.as_ref().unwrap().len(), 200);
    assert_eq!(ds.labels.as_ref().unwrap().len(), 200);
    assert_eq!(ds.trajectory.as_ref().unwrap().len(), 200);
    assert!(ds.markers.is_some());

    // an existing dataset is only replaced with force
    assert!(matches!(generate_command(&cfg, false), Err(Error::Config(_))));
    let first = read_dir_bytes(&cfg.dataset);
    generate_command(&cfg, true).unwrap();
    assert_eq!(read_dir_bytes(&cfg.dataset), first);

    cfg.synth.trajectory.frame_count = 0;
    cfg.dataset = tmp.path().join("empty");
    assert!(matches!(generate_command(&cfg, false), Err(Error::Config(_))));
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), 12);
    generate_dataset(&cfg.synth, cfg.seed, &cfg.dataset, false).unwrap();
    let a = run_pipeline(&cfg).unwrap();
    let first = read_dir_bytes(&cfg.output);
    let b = run_pipeline(&cfg).unwrap();
    let mut second = read_dir_bytes(&cfg.output);
    // wall times are the only thing allowed to change
    let mut first = first;
    first.remove("timings.log");
    second.remove("timings.log");
    assert_eq!(first, second);
    assert_eq!(a.metrics, b.metrics);
    assert!(!a.map.cloud.is_empty());
    assert!(a.manifest.stages.iter().all(|s| s.status == "ok"));
    assert!(a.manifest.outputs.contains_key("cloud.ply"));
    assert!(!a.manifest.partial);
}

#[test]
fn masking_every_class_gives_an_empty_map() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), 8);
    let tax = cfg.taxonomy().unwrap();
    cfg.segmentation.unwanted = (0..tax.len() as u8).map(|c| tax.name(c).unwrap().to_string()).collect();
    generate_dataset(&cfg.synth, cfg.seed, &cfg.dataset, false).unwrap();
    let out = run_pipeline(&cfg).unwrap();
    assert!(out.map.cloud.is_empty());
    assert!(out.grid.is_none());
    assert!(out.manifest.empty_outputs.iter().any(|f| f == "cloud.ply"));
    let ortho = out.manifest.stages.iter().find(|s| s.name == "ortho").unwrap();
    assert!(ortho.status.starts_with("skipped"));
    assert!(cfg.output.join("cloud.ply").is_file());
}

#[test]
fn broken_input_names_the_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), 6);
    generate_dataset(&cfg.synth, cfg.seed, &cfg.dataset, false).unwrap();
    std::fs::write(cfg.dataset.join("depth").join("000003.pfm"), b"PF\n1 1\n").unwrap();
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("run succeeded on a truncated depth map"),
    }
    // the manifest is still written and marks the run partial
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["partial"], true);
}

#[test]
fn config_errors() {
    assert!(matches!(
        PipelineConfig::from_toml_with("", &["fusion.pixel_filter_fraction=1.5".into()]),
        Err(Error::Config(_))
    ));
    assert!(matches!(PipelineConfig::from_toml_with("nonsense = 1", &[]), Err(Error::Config(_))));
    assert!(matches!(PipelineConfig::from_toml_with("", &["no_equals".into()]), Err(Error::Config(_))));
    assert!(matches!(
        PipelineConfig::from_toml_with("", &["segmentation.unwanted=[\"kelp forest\"]".into()]),
        Err(Error::Config(_))
    ));
    let cfg = PipelineConfig::from_toml_with("", &["estimator.backend=\"self_supervised\"".into(), "seed=7".into()]).unwrap();
    assert_eq!(cfg.estimator.backend, EstimatorBackend::SelfSupervised);
    assert_eq!(cfg.seed, 7);
    // missing dataset is reported before any stage runs
    let missing = PipelineConfig {
        dataset: "/nonexistent/reefsfm".into(),
        ..Default::default()
    };
    assert!(matches!(run_pipeline(&missing), Err(Error::Config(_))));
}

#[test]
fn config_round_trips_and_hash_ignores_output() {
    let cfg = PipelineConfig::from_toml_with("", &["seed=3".into()]).unwrap();
    let back = PipelineConfig::from_toml_with(&cfg.to_toml_string(), &[]).unwrap();
    assert_eq!(back, cfg);
    let moved = PipelineConfig {
        output: "elsewhere".into(),
        ..cfg.clone()
    };
    assert_eq!(moved.hash(), cfg.hash());
    let reseeded = PipelineConfig { seed: 4, ..cfg.clone() };
    assert_ne!(reseeded.hash(), cfg.hash());
}
