//! Configuration, dataset directories and the staged end-to-end run.

mod config;
mod dataset;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimation::{
    fit_self_supervised, frame_uncertainty, pixel_uncertainty_filter, sequence_losses, EstimatorParameters, Estimator,
    FitReport, GroundTruthEstimator, SelfSupervisedEstimator, UncertaintyMap,
};
use crate::evaluation::{
    accuracies_csv, backproject_sightings, confusion, marker_sightings, snap_to_cloud, transfer_labels, Accuracies,
    ConfusionMatrix, MarkerReport, MarkerSet,
};
use crate::fusion::{point_uncertainty_filter, write_ply, IntegrationStats, Observation, SemanticPointCloud, TsdfVolume};
use crate::geometry::{BoolGrid, CameraIntrinsics, DepthMap, PoseSE3};
use crate::io::{read_bytes, read_json, write_bytes, write_json};
use crate::ortho::{benthic_cover, ortho_project, write_cover_csv, write_ortho_pngs, OrthoGrid};
use crate::semantics::{
    mask_unwanted, ClassTaxonomy, ExternalSegmenter, LabelMap, OracleSegmenter, Segmenter, CLASS_COUNT, UNLABELED,
};
use crate::synth::generate_scene;
use crate::{Error, Result};

pub use config::{
    EstimatorBackend, EstimatorSection, EvaluationSection, FusionSection, OrthoSection, PipelineConfig,
    SegmentationBackend, SegmentationSection,
};
pub use dataset::{frame_name, generate_dataset, load_dataset, Dataset, DatasetInfo, MarkerFile, SynthSource, DATASET_FORMAT};

pub const FIT_FILE: &str = "fit_parameters.json";
pub const CLOUD_FILE: &str = "cloud.ply";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run record. Wall times live in `timings.log` so that this file is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    /// SHA-256 per written file (relative path).
    pub outputs: BTreeMap<String, String>,
    /// Outputs that were produced but hold no data.
    pub empty_outputs: Vec<String>,
    pub partial: bool,
    pub timings: String,
}

/// Bookkeeping shared by the stages of one command.
pub struct Run {
    pub config: PipelineConfig,
    pub taxonomy: ClassTaxonomy,
    manifest: Manifest,
    timings: String,
}

pub struct Estimates {
    pub backend: Box<dyn Estimator + Send>,
    pub depths: Vec<DepthMap>,
    /// Camera-to-cloud pose per frame. The cloud frame is the dataset's world
    /// frame when the dataset has a trajectory (for fitted poses: anchored at
    /// the first camera), else the first camera.
    pub camera_to_cloud: Vec<PoseSE3>,
    /// Fitted parameters of the self-supervised backend.
    pub parameters: Option<EstimatorParameters>,
    pub fit: Option<FitReport>,
}

pub struct MapResult {
    pub cloud: SemanticPointCloud,
    pub raw_point_count: usize,
    pub predictions: Vec<LabelMap>,
    pub stats: IntegrationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMetrics {
    pub samples: u64,
    pub accuracies: Accuracies,
    pub grouped: Accuracies,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frame_count: usize,
    pub point_count: usize,
    pub markers: Option<MarkerReport>,
    pub pixel_semantics: Option<SemanticMetrics>,
    pub point_semantics: Option<SemanticMetrics>,
    pub cover: Option<BTreeMap<String, f64>>,
    /// Cover of the true scene classes under the occupied ortho cells.
    pub reference_cover: Option<BTreeMap<String, f64>>,
    pub hole_fraction: Option<f64>,
    /// RMS vertical distance from cloud points to the true surface.
    pub surface_rms: Option<f64>,
    /// Mean geometric-consistency term over sequence pairs.
    pub geometric_residual: Option<f64>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

impl Run {
    pub fn new(config: PipelineConfig, command: &str) -> Result<Self> {
        config.validate()?;
        config.check_inputs()?;
        let taxonomy = config.taxonomy()?;
        let manifest = Manifest {
            tool: "reefsfm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config.hash(),
            seed: config.seed,
            stages: Vec::new(),
            outputs: BTreeMap::new(),
            empty_outputs: Vec::new(),
            partial: false,
            timings: "timings.log".into(),
        };
        Ok(Run {
            config,
            taxonomy,
            manifest,
            timings: String::from("stage\tseconds\tframes\tframes_per_second\n"),
        })
    }

    pub fn output(&self) -> &Path {
        &self.config.output
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Times a stage and records its outcome; errors are tagged with the
    /// stage name.
    pub fn stage<T>(&mut self, name: &'static str, frames: usize, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let result = f(self).map_err(|e| match e {
            Error::Stage { .. } | Error::Config(_) => e,
            other => other.in_stage(name, None),
        });
        let secs = start.elapsed().as_secs_f64();
        let fps = if secs > 0.0 { frames as f64 / secs } else { 0.0 };
        writeln!(self.timings, "{name}\t{secs:.3}\t{frames}\t{fps:.2}").expect("write to string");
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status: if result.is_ok() { "ok" } else { "failed" }.into(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        if result.is_err() {
            self.manifest.partial = true;
        }
        result
    }

    fn record(&mut self, rel: &str, empty: bool) -> Result<()> {
        let hash = sha256_file(&self.output().join(rel))?;
        self.manifest.outputs.insert(rel.into(), hash);
        if empty {
            self.manifest.empty_outputs.push(rel.into());
        }
        Ok(())
    }

    fn write_file(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_bytes(&self.output().join(rel), bytes)?;
        self.record(rel, false)
    }

    fn write_json_file<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        write_json(&self.output().join(rel), value)?;
        self.record(rel, false)
    }

    /// Writes the manifest, timings and resolved config; call once at the end
    /// (also after a failure).
    pub fn finish(&mut self) -> Result<()> {
        let out = self.output().to_path_buf();
        write_bytes(&out.join("config.toml"), self.config.to_toml_string().as_bytes())?;
        write_bytes(&out.join("timings.log"), self.timings.as_bytes())?;
        write_json(&out.join("manifest.json"), &self.manifest)
    }

    pub fn load_dataset(&mut self) -> Result<Dataset> {
        let root = self.config.dataset.clone();
        self.stage("load", 0, |_| load_dataset(&root))
    }

    pub fn intrinsics(&self, ds: &Dataset) -> CameraIntrinsics {
        self.config.intrinsics.unwrap_or(ds.info.intrinsics)
    }

    /// Fits (or loads previously fitted) parameters for the self-supervised
    /// backend, or wraps the dataset's ground truth.
    pub fn estimate(&mut self, ds: &Dataset, reuse_fit: bool) -> Result<Estimates> {
        let n = ds.frames.len();
        let k = self.intrinsics(ds);
        match self.config.estimator.backend {
            EstimatorBackend::GroundTruth => self.stage("estimate", n, |_| {
                let (Some(depths), Some(poses)) = (&ds.depths, &ds.trajectory) else {
                    return Err(Error::Config("ground_truth backend needs depth/ and trajectory.csv".into()));
                };
                let backend = GroundTruthEstimator {
                    depths: depths.clone(),
                    camera_to_world: poses.clone(),
                };
                Ok(Estimates {
                    backend: Box::new(backend),
                    depths: depths.clone(),
                    camera_to_cloud: poses.clone(),
                    parameters: None,
                    fit: None,
                })
            }),
            EstimatorBackend::SelfSupervised => {
                let fit_path = self.output().join(FIT_FILE);
                let fit_config = self.config.fit_config();
                let (params, report) = if reuse_fit && fit_path.exists() {
                    let p: EstimatorParameters = self.stage("estimate", n, |_| read_json(&fit_path))?;
                    (p, None)
                } else {
                    let report = self.stage("fit", n, |_| fit_self_supervised(&ds.frames, &k, &fit_config))?;
                    self.write_json_file(FIT_FILE, &report.parameters)?;
                    let mut csv = String::from("step,loss,best\n");
                    for (i, (l, b)) in report.loss_trace.iter().zip(&report.best_so_far).enumerate() {
                        writeln!(csv, "{i},{l:e},{b:e}").expect("write to string");
                    }
                    self.write_file("loss.csv", csv.as_bytes())?;
                    (report.parameters.clone(), Some(report))
                };
                if params.frame_count() != n || params.width != k.width || params.height != k.height {
                    return Err(Error::Config(format!("{} does not match the dataset", fit_path.display())));
                }
                let backend = SelfSupervisedEstimator {
                    parameters: Some(params.clone()),
                };
                let anchor = ds.trajectory.as_ref().map_or_else(PoseSE3::identity, |t| t[0]);
                let depths = (0..n)
                    .map(|i| backend.depth(i).map_err(|e| e.in_stage("estimate", Some(i))))
                    .collect::<Result<Vec<_>>>()?;
                let mut camera_to_cloud = Vec::with_capacity(n);
                let mut to_first = PoseSE3::identity();
                for i in 0..n {
                    if i > 0 {
                        // camera i → camera i−1 → … → camera 0
                        to_first = to_first.compose(&backend.pair_pose(i - 1)?.inverse());
                    }
                    camera_to_cloud.push(anchor.compose(&to_first));
                }
                Ok(Estimates {
                    backend: Box::new(backend),
                    depths,
                    camera_to_cloud,
                    parameters: Some(params),
                    fit: report,
                })
            }
        }
    }

    fn segmenter(&self, ds: &Dataset) -> Result<Box<dyn Segmenter>> {
        let s = &self.config.segmentation;
        Ok(match s.backend {
            SegmentationBackend::Oracle => {
                let truth = ds
                    .labels
                    .clone()
                    .ok_or_else(|| Error::Config("oracle segmentation needs labels/ in the dataset".into()))?;
                let kernel = (!s.confusion.entries.is_empty())
                    .then(|| s.confusion.matrix(&self.taxonomy))
                    .transpose()?;
                Box::new(OracleSegmenter {
                    truth,
                    kernel,
                    seed: self.config.seed,
                })
            }
            SegmentationBackend::External => Box::new(ExternalSegmenter {
                dir: s.external_dir.clone().expect("validated"),
                tiling: s.tiling,
            }),
        })
    }

    /// Uncertainty filter, segmentation, masking, TSDF fusion, extraction
    /// and the point filter. Writes the cloud.
    pub fn map(&mut self, ds: &Dataset, est: &Estimates) -> Result<MapResult> {
        let n = ds.frames.len();
        let k = self.intrinsics(ds);
        let fraction = self.config.fusion.pixel_filter_fraction;
        let backend: &dyn Estimator = est.backend.as_ref();
        let (uncertainty, keep): (Vec<UncertaintyMap>, Vec<BoolGrid>) = self.stage("uncertainty", n, |_| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let u = frame_uncertainty(backend, &k, i).map_err(|e| e.in_stage("uncertainty", Some(i)))?;
                    let m = pixel_uncertainty_filter(&est.depths[i], &u, fraction).map_err(|e| e.in_stage("uncertainty", Some(i)))?;
                    Ok((u, m))
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().unzip())
        })?;
        let segmenter = self.segmenter(ds)?;
        let unwanted = self.taxonomy.ids(&self.config.segmentation.unwanted)?;
        let taxonomy = self.taxonomy.clone();
        let (predictions, masks): (Vec<LabelMap>, Vec<BoolGrid>) = self.stage("segment", n, |_| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let labels = segmenter.segment(i, &ds.frames[i]).map_err(|e| e.in_stage("segment", Some(i)))?;
                    let mask = mask_unwanted(&labels, &unwanted, &taxonomy)?;
                    Ok((labels, mask.and(&keep[i])))
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().unzip())
        })?;
        let fusion = self.config.fusion.clone();
        let (cloud, raw, stats) = self.stage("fuse", n, |_| {
            let mut vol = TsdfVolume::new(&fusion.tsdf)?;
            let mut total = IntegrationStats::default();
            for i in 0..n {
                let s = vol
                    .integrate_frame(&Observation {
                        frame: &ds.frames[i],
                        depth: &est.depths[i],
                        keep: Some(&masks[i]),
                        labels: Some(&predictions[i]),
                        uncertainty: Some(&uncertainty[i]),
                        camera_to_world: &est.camera_to_cloud[i],
                        k: &k,
                    })
                    .map_err(|e| e.in_stage("fuse", Some(i)))?;
                total.fused_pixels += s.fused_pixels;
                total.rejected_pixels += s.rejected_pixels;
                total.touched_blocks += s.touched_blocks;
            }
            let raw = vol.extract_point_cloud(fusion.min_weight);
            let filtered = point_uncertainty_filter(&raw, fusion.point_filter_fraction)?;
            Ok((filtered, raw.len(), total))
        })?;
        write_ply(&self.output().join(CLOUD_FILE), &cloud)?;
        self.record(CLOUD_FILE, cloud.is_empty())?;
        Ok(MapResult {
            cloud,
            raw_point_count: raw,
            predictions,
            stats,
        })
    }

    pub fn gravity(&self, ds: &Dataset) -> [f64; 3] {
        self.config.ortho.gravity.unwrap_or(ds.info.gravity)
    }

    /// Ortho maps and cover table; `None` for an empty cloud.
    pub fn ortho(&mut self, cloud: &SemanticPointCloud, gravity: [f64; 3]) -> Result<Option<OrthoGrid>> {
        if cloud.is_empty() {
            self.manifest.stages.push(StageRecord {
                name: "ortho".into(),
                status: "skipped: empty cloud".into(),
                error: None,
            });
            return Ok(None);
        }
        let o = self.config.ortho.clone();
        let scaled = SemanticPointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| crate::fusion::CloudPoint {
                    position: p.position.map(|c| c * o.scale),
                    ..*p
                })
                .collect(),
        };
        let taxonomy = self.taxonomy.clone();
        let out = self.output().to_path_buf();
        let grid = self.stage("ortho", 0, |_| {
            let grid = ortho_project(&scaled, gravity, o.cell_size)?;
            write_ortho_pngs(&out, &grid, &taxonomy)?;
            write_cover_csv(&out.join("cover.csv"), &grid, &taxonomy)?;
            Ok(grid)
        })?;
        for f in ["ortho_rgb.png", "ortho_class.png", "ortho_height.png", "cover.csv"] {
            self.record(f, false)?;
        }
        Ok(Some(grid))
    }

    fn semantic_metrics(&self, pred: &[u8], truth: &[u8]) -> Result<Option<(SemanticMetrics, ConfusionMatrix)>> {
        let m = confusion(pred, truth, CLASS_COUNT)?;
        if m.total() == 0 {
            return Ok(None);
        }
        let grouping = self.taxonomy.grouping(&self.config.segmentation.grouping)?;
        Ok(Some((
            SemanticMetrics {
                samples: m.total(),
                accuracies: m.accuracies()?,
                grouped: m.grouped(&grouping)?.accuracies()?,
            },
            m,
        )))
    }

    fn write_semantics(&mut self, level: &str, metrics: &SemanticMetrics, m: &ConfusionMatrix) -> Result<()> {
        let names: Vec<String> = (0..CLASS_COUNT as u8).map(|c| self.taxonomy.name(c).unwrap_or("").to_string()).collect();
        self.write_file(&format!("accuracy_{level}.csv"), accuracies_csv(&metrics.accuracies, &names).as_bytes())?;
        self.write_file(&format!("confusion_{level}.csv"), m.to_csv(&names).as_bytes())?;
        let png = format!("confusion_{level}.png");
        m.write_heat_map(&self.output().join(&png), 12)?;
        self.record(&png, false)
    }

    /// Spatial and semantic metrics against whatever ground truth the dataset
    /// carries.
    pub fn evaluate(
        &mut self,
        ds: &Dataset,
        est: &Estimates,
        map: &MapResult,
        grid: Option<&OrthoGrid>,
    ) -> Result<Metrics> {
        let n = ds.frames.len();
        let k = self.intrinsics(ds);
        let cfg = self.config.clone();
        let voxel = cfg.fusion.tsdf.voxel_size;
        let taxonomy = self.taxonomy.clone();
        let mut metrics = self.stage("evaluate", n, |run| {
            let mut m = Metrics {
                frame_count: n,
                point_count: map.cloud.len(),
                ..Default::default()
            };
            if let (Some(markers), Some(poses), Some(depths)) = (&ds.markers, &ds.trajectory, &ds.depths) {
                let mut estimated = BTreeMap::new();
                for marker in &markers.markers {
                    let sightings = marker_sightings(marker.position, poses, depths, &k, cfg.evaluation.marker_margin_px);
                    if let Some(p) = backproject_sightings(&sightings, &est.depths, &est.camera_to_cloud, &k) {
                        estimated.insert(marker.id, snap_to_cloud(&map.cloud, p, cfg.evaluation.marker_snap_voxels * voxel));
                    }
                }
                let set = MarkerSet {
                    pairs: markers.pairs.clone(),
                    estimated,
                };
                m.markers = set.evaluate().ok();
            }
            // the true scene is only comparable when the cloud is in world units
            let scene = match (&ds.info.synth, cfg.estimator.backend) {
                (Some(src), EstimatorBackend::GroundTruth) => Some(generate_scene(src.seed, &src.config, &taxonomy)?),
                _ => None,
            };
            if let Some(truth) = &ds.labels {
                let pred: Vec<u8> = map.predictions.iter().flat_map(|l| l.labels.iter().copied()).collect();
                let gt: Vec<u8> = truth.iter().flat_map(|l| l.labels.iter().copied()).collect();
                if let Some((s, c)) = run.semantic_metrics(&pred, &gt)? {
                    run.write_semantics("pixel", &s, &c)?;
                    m.pixel_semantics = Some(s);
                }
            }
            if !map.cloud.is_empty() {
                // point truth: the scene class under the point, else a vote
                // over the labelled frames that see it
                let gt_points = match (&scene, &ds.labels) {
                    (Some(scene), _) => Some(
                        map.cloud
                            .points
                            .iter()
                            .map(|p| scene.class_at(p.position[0], p.position[1]).unwrap_or(UNLABELED))
                            .collect::<Vec<u8>>(),
                    ),
                    (None, Some(truth)) => Some(transfer_labels(
                        &map.cloud,
                        &est.camera_to_cloud,
                        &est.depths,
                        truth,
                        &k,
                        cfg.evaluation.label_transfer_voxels * voxel,
                    )),
                    (None, None) => None,
                };
                if let Some(gt_points) = gt_points {
                    let pred: Vec<u8> = map.cloud.points.iter().map(|p| p.class_id).collect();
                    if let Some((s, c)) = run.semantic_metrics(&pred, &gt_points)? {
                        run.write_semantics("point", &s, &c)?;
                        m.point_semantics = Some(s);
                    }
                }
            }
            let named = |fr: &[f64]| -> BTreeMap<String, f64> {
                fr.iter()
                    .enumerate()
                    .filter(|(_, f)| **f > 0.0)
                    .map(|(c, f)| (taxonomy.name(c as u8).unwrap_or("?").to_string(), *f))
                    .collect()
            };
            if let Some(g) = grid {
                m.cover = Some(named(&benthic_cover(g, &taxonomy)?));
                m.hole_fraction = Some(g.hole_fraction()?);
            }
            if let Some(scene) = &scene {
                if !map.cloud.is_empty() {
                    let sq: f64 = map
                        .cloud
                        .points
                        .iter()
                        .map(|p| {
                            let h = scene.height_at(p.position[0], p.position[1]).unwrap_or(f64::NAN);
                            (p.position[2] - h).powi(2)
                        })
                        .filter(|d| d.is_finite())
                        .sum();
                    m.surface_rms = Some((sq / map.cloud.len() as f64).sqrt());
                }
                if let (Some(g), true) = (grid, cfg.ortho.scale == 1.0) {
                    let (u, v) = (Vector3::from(g.axis_u), Vector3::from(g.axis_v));
                    let mut counts = vec![0usize; taxonomy.len()];
                    let mut total = 0;
                    for j in 0..g.height {
                        for i in 0..g.width {
                            if g.cells[j * g.width + i].is_none() {
                                continue;
                            }
                            let cu = (g.origin[0] + i as i64) as f64 + 0.5;
                            let cv = (g.origin[1] + j as i64) as f64 + 0.5;
                            let p = (u * cu + v * cv) * g.cell_size;
                            if let Some(c) = scene.class_at(p.x, p.y) {
                                counts[c as usize] += 1;
                                total += 1;
                            }
                        }
                    }
                    if total > 0 {
                        let fr: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
                        m.reference_cover = Some(named(&fr));
                    }
                }
            }
            if let Some(params) = &est.parameters {
                let losses = sequence_losses(&ds.frames, &k, params, &cfg.estimator.fit.weights)?;
                m.geometric_residual = Some(losses.iter().map(|(_, l)| l.geometric).sum::<f64>() / losses.len() as f64);
            }
            Ok(m)
        })?;
        if let Some(r) = &metrics.markers {
            let mut csv = String::from("a,b,truth,estimated,scaled,relative_error\n");
            for p in &r.pairs {
                writeln!(csv, "{},{},{:.6},{:.6},{:.6},{:.6}", p.a, p.b, p.truth, p.estimated, p.scaled, p.relative_error)
                    .expect("write to string");
            }
            self.write_file("markers.csv", csv.as_bytes())?;
        }
        metrics.frame_count = n;
        self.write_json_file("metrics.json", &metrics)?;
        Ok(metrics)
    }
}

/// Everything a full run produced.
pub struct RunOutput {
    pub estimates: Estimates,
    pub map: MapResult,
    pub grid: Option<OrthoGrid>,
    pub metrics: Metrics,
    pub manifest: Manifest,
}

fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Estimate → uncertainty filter → segmentation → masking → fusion →
/// extraction → point filter → ortho-projection → metrics.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    let mut run = Run::new(config.clone(), "run")?;
    prepare_output(run.output())?;
    let result = (|| -> Result<_> {
        let ds = run.load_dataset()?;
        let est = run.estimate(&ds, false)?;
        let map = run.map(&ds, &est)?;
        let gravity = run.gravity(&ds);
        let grid = run.ortho(&map.cloud, gravity)?;
        let metrics = run.evaluate(&ds, &est, &map, grid.as_ref())?;
        Ok((est, map, grid, metrics))
    })();
    run.finish()?;
    let (estimates, map, grid, metrics) = result?;
    Ok(RunOutput {
        estimates,
        map,
        grid,
        metrics,
        manifest: run.manifest.clone(),
    })
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = available cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Subcommands other than `run`, each on the configured output directory.
pub fn fit_command(config: &PipelineConfig) -> Result<Manifest> {
    let mut run = Run::new(config.clone(), "fit")?;
    prepare_output(run.output())?;
    let r = (|| -> Result<_> {
        if run.config.estimator.backend != EstimatorBackend::SelfSupervised {
            return Err(Error::Config("`fit` needs estimator.backend = \"self_supervised\"".into()));
        }
        let ds = run.load_dataset()?;
        run.estimate(&ds, false).map(|_| ())
    })();
    run.finish()?;
    r.map(|_| run.manifest.clone())
}

pub fn map_command(config: &PipelineConfig) -> Result<Manifest> {
    let mut run = Run::new(config.clone(), "map")?;
    prepare_output(run.output())?;
    let r = (|| -> Result<_> {
        let ds = run.load_dataset()?;
        let est = run.estimate(&ds, true)?;
        run.map(&ds, &est).map(|_| ())
    })();
    run.finish()?;
    r.map(|_| run.manifest.clone())
}

pub fn ortho_command(config: &PipelineConfig) -> Result<Manifest> {
    let mut run = Run::new(config.clone(), "ortho")?;
    prepare_output(run.output())?;
    let r = (|| -> Result<_> {
        let ds = run.load_dataset()?;
        let path = run.output().join(CLOUD_FILE);
        let cloud = run.stage("read_cloud", 0, |_| crate::fusion::read_ply(&path))?;
        let gravity = run.gravity(&ds);
        run.ortho(&cloud, gravity).map(|_| ())
    })();
    run.finish()?;
    r.map(|_| run.manifest.clone())
}

/// Recomputes estimates and predictions (reusing fitted parameters) and
/// evaluates the cloud found in the output directory.
pub fn eval_command(config: &PipelineConfig) -> Result<Metrics> {
    let mut run = Run::new(config.clone(), "eval")?;
    prepare_output(run.output())?;
    let r = (|| -> Result<_> {
        let ds = run.load_dataset()?;
        let est = run.estimate(&ds, true)?;
        let path = run.output().join(CLOUD_FILE);
        let cloud = run.stage("read_cloud", 0, |_| crate::fusion::read_ply(&path))?;
        let segmenter = run.segmenter(&ds)?;
        let n = ds.frames.len();
        let predictions = run.stage("segment", n, |_| {
            (0..n).map(|i| segmenter.segment(i, &ds.frames[i])).collect::<Result<Vec<_>>>()
        })?;
        let map = MapResult {
            raw_point_count: cloud.len(),
            cloud,
            predictions,
            stats: IntegrationStats::default(),
        };
        let gravity = run.gravity(&ds);
        let grid = run.ortho(&map.cloud, gravity)?;
        run.evaluate(&ds, &est, &map, grid.as_ref())
    })();
    run.finish()?;
    r
}

/// Writes a synthetic dataset to the configured dataset directory.
pub fn generate_command(config: &PipelineConfig, force: bool) -> Result<PathBuf> {
    config.validate()?;
    if config.synth.trajectory.frame_count == 0 {
        return Err(Error::Config("frame count must be positive".into()));
    }
    generate_dataset(&config.synth, config.seed, &config.dataset, force)?;
    Ok(config.dataset.clone())
}
