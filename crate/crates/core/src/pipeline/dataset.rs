use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::io::{read_frame, read_json, read_labels, read_pfm, read_trajectory, write_frame, write_json, write_labels, write_pfm, write_trajectory};
use crate::semantics::{ClassTaxonomy, LabelMap};
use crate::synth::{generate_scene, generate_trajectory, render_sequence, Marker, MarkerPair, SynthConfig, SyntheticScene};
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "reefsfm-dataset/1";

/// `dataset.json` at the root of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub format: String,
    pub frame_count: usize,
    pub intrinsics: CameraIntrinsics,
    /// Unit gravity direction in world coordinates.
    pub gravity: [f64; 3],
    /// Generator settings for synthetic datasets.
    #[serde(default)]
    pub synth: Option<SynthSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub seed: u64,
    pub config: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerFile {
    pub markers: Vec<Marker>,
    pub pairs: Vec<MarkerPair>,
}

/// A loaded dataset; ground-truth sidecars are optional.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub info: DatasetInfo,
    pub frames: Vec<Frame>,
    pub depths: Option<Vec<DepthMap>>,
    pub labels: Option<Vec<LabelMap>>,
    /// Camera-to-world per frame.
    pub trajectory: Option<Vec<PoseSE3>>,
    pub markers: Option<MarkerFile>,
}

pub fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

fn is_nonempty_dir(path: &Path) -> bool {
    std::fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Renders a synthetic sequence with ground-truth depth, labels, poses and
/// markers into `dir`. A non-empty `dir` is refused unless `force`, in which
/// case it is cleared first.
pub fn generate_dataset(synth: &SynthConfig, seed: u64, dir: &Path, force: bool) -> Result<SyntheticScene> {
    synth.validate()?;
    if is_nonempty_dir(dir) {
        if !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    } else if dir.is_file() {
        return Err(Error::Config(format!("{} is a file", dir.display())));
    }
    let taxonomy = ClassTaxonomy::default();
    let scene = generate_scene(seed, synth, &taxonomy)?;
    let poses = generate_trajectory(&synth.trajectory, seed)?;
    let k = synth.camera.intrinsics()?;
    let views = render_sequence(&scene, &poses, &k)?;
    for (i, v) in views.iter().enumerate() {
        write_frame(&dir.join("frames").join(frame_name(i, "png")), &v.frame)?;
        write_pfm(&dir.join("depth").join(frame_name(i, "pfm")), &v.depth)?;
        write_labels(&dir.join("labels").join(frame_name(i, "png")), &v.labels)?;
    }
    write_trajectory(&dir.join("trajectory.csv"), &poses)?;
    write_json(
        &dir.join("markers.json"),
        &MarkerFile {
            markers: scene.markers.clone(),
            pairs: scene.marker_pairs.clone(),
        },
    )?;
    write_json(
        &dir.join("dataset.json"),
        &DatasetInfo {
            format: DATASET_FORMAT.into(),
            frame_count: views.len(),
            intrinsics: k,
            gravity: [0.0, 0.0, -1.0],
            synth: Some(SynthSource {
                seed,
                config: synth.clone(),
            }),
        },
    )?;
    Ok(scene)
}

/// Loads frames and every sidecar that is present. A sidecar directory must
/// hold one file per frame.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let info_path = root.join("dataset.json");
    if !info_path.exists() {
        return Err(Error::Config(format!("{} is not a dataset (no dataset.json)", root.display())));
    }
    let info: DatasetInfo = read_json(&info_path)?;
    if info.format != DATASET_FORMAT {
        return Err(Error::format(&info_path, format!("unsupported format `{}`", info.format)));
    }
    info.intrinsics.validate()?;
    let n = info.frame_count;
    if n == 0 {
        return Err(Error::format(&info_path, "dataset has no frames"));
    }
    let frames = (0..n)
        .map(|i| {
            let f = read_frame(&root.join("frames").join(frame_name(i, "png")), i)?;
            crate::geometry::check_dims(info.intrinsics.dims(), f.dims())?;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let depths = root
        .join("depth")
        .is_dir()
        .then(|| (0..n).map(|i| read_pfm(&root.join("depth").join(frame_name(i, "pfm")))).collect::<Result<Vec<_>>>())
        .transpose()?;
    let labels = root
        .join("labels")
        .is_dir()
        .then(|| (0..n).map(|i| read_labels(&root.join("labels").join(frame_name(i, "png")))).collect::<Result<Vec<_>>>())
        .transpose()?;
    let trajectory = root
        .join("trajectory.csv")
        .exists()
        .then(|| read_trajectory(&root.join("trajectory.csv")))
        .transpose()?;
    if trajectory.as_ref().is_some_and(|t| t.len() != n) {
        return Err(Error::format(root.join("trajectory.csv"), format!("expected {n} poses")));
    }
    let markers = root
        .join("markers.json")
        .exists()
        .then(|| read_json::<MarkerFile>(&root.join("markers.json")))
        .transpose()?;
    Ok(Dataset {
        root: root.to_path_buf(),
        info,
        frames,
        depths,
        labels,
        trajectory,
        markers,
    })
}
