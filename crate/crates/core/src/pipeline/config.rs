use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimation::FitConfig;
use crate::fusion::TsdfConfig;
use crate::geometry::CameraIntrinsics;
use crate::semantics::{ClassTaxonomy, ConfusionKernel, TilingConfig};
use crate::synth::SynthConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorBackend {
    GroundTruth,
    SelfSupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub backend: EstimatorBackend,
    /// `seed` is replaced by the run seed.
    pub fit: FitConfig,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            backend: EstimatorBackend::GroundTruth,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationBackend {
    /// Dataset labels, optionally passed through the confusion kernel.
    Oracle,
    /// Probability grids from `external_dir`.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    pub backend: SegmentationBackend,
    pub confusion: ConfusionKernel,
    pub external_dir: Option<PathBuf>,
    pub tiling: TilingConfig,
    /// Class names excluded from fusion.
    pub unwanted: Vec<String>,
    /// Grouping used for the grouped accuracies.
    pub grouping: String,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        SegmentationSection {
            backend: SegmentationBackend::Oracle,
            confusion: ConfusionKernel::default(),
            external_dir: None,
            tiling: TilingConfig::default(),
            unwanted: ["background", "human", "fish"].map(String::from).to_vec(),
            grouping: "cover".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub tsdf: TsdfConfig,
    /// Minimum voxel weight for extracted surface points.
    pub min_weight: f64,
    pub pixel_filter_fraction: f64,
    pub point_filter_fraction: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            tsdf: TsdfConfig::default(),
            min_weight: 2.0,
            pixel_filter_fraction: 0.35,
            point_filter_fraction: 0.20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrthoSection {
    pub cell_size: f64,
    /// Multiplies cloud coordinates before gridding (metric scaling).
    pub scale: f64,
    /// Overrides the dataset's gravity direction.
    pub gravity: Option<[f64; 3]>,
}

impl Default for OrthoSection {
    fn default() -> Self {
        OrthoSection {
            cell_size: 0.05,
            scale: 1.0,
            gravity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Markers closer than this to the image border are not picked.
    pub marker_margin_px: f64,
    /// Cloud points within this many voxels of a picked marker locate it.
    pub marker_snap_voxels: f64,
    /// Depth agreement, in voxels, for transferring labels onto points.
    pub label_transfer_voxels: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            marker_margin_px: 8.0,
            marker_snap_voxels: 1.5,
            label_transfer_voxels: 1.0,
        }
    }
}

/// Everything a run needs; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Overrides the intrinsics stored with the dataset.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Taxonomy TOML; the bundled taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    pub synth: SynthConfig,
    pub estimator: EstimatorSection,
    pub segmentation: SegmentationSection,
    pub fusion: FusionSection,
    pub ortho: OrthoSection,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset: PathBuf::from("dataset"),
            output: PathBuf::from("output"),
            intrinsics: None,
            taxonomy: None,
            synth: SynthConfig::default(),
            estimator: EstimatorSection::default(),
            segmentation: SegmentationSection::default(),
            fusion: FusionSection::default(),
            ortho: OrthoSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses `a.b.c=value`; the value is read as a TOML literal and falls back
/// to a plain string.
fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text and applies `key=value` overrides on top.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(config_err)?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut root, &path, value)?;
        }
        let config: PipelineConfig = toml::Value::Table(root).try_into().map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Value checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        let f = &self.fusion;
        for (name, v) in [("pixel_filter_fraction", f.pixel_filter_fraction), ("point_filter_fraction", f.point_filter_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        f.tsdf.validate()?;
        if !(f.min_weight >= 0.0) {
            return Err(Error::Config("fusion.min_weight must be non-negative".into()));
        }
        let o = &self.ortho;
        if !(o.cell_size > 0.0 && o.cell_size.is_finite() && o.scale > 0.0 && o.scale.is_finite()) {
            return Err(Error::Config("ortho.cell_size and ortho.scale must be positive".into()));
        }
        if let Some(g) = o.gravity {
            let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if !((n - 1.0).abs() <= 1e-9) {
                return Err(Error::Config(format!("ortho.gravity {g:?} is not a unit vector")));
            }
        }
        let e = &self.evaluation;
        if !(e.marker_margin_px >= 0.0 && e.marker_snap_voxels >= 0.0 && e.label_transfer_voxels > 0.0) {
            return Err(Error::Config("evaluation tolerances must be non-negative".into()));
        }
        if let Some(k) = &self.intrinsics {
            k.validate().map_err(config_err)?;
        }
        self.estimator.fit.validate()?;
        self.synth.validate()?;
        let taxonomy = self.taxonomy()?;
        taxonomy.ids(&self.segmentation.unwanted).map_err(config_err)?;
        taxonomy.grouping(&self.segmentation.grouping).map_err(config_err)?;
        self.segmentation.confusion.matrix(&taxonomy)?;
        if self.segmentation.backend == SegmentationBackend::External && self.segmentation.external_dir.is_none() {
            return Err(Error::Config("external segmentation needs segmentation.external_dir".into()));
        }
        Ok(())
    }

    /// Inputs a run reads must exist; `generate` skips this.
    pub fn check_inputs(&self) -> Result<()> {
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!("dataset directory {} does not exist", self.dataset.display())));
        }
        if let Some(d) = &self.segmentation.external_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!("segmentation.external_dir {} does not exist", d.display())));
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<ClassTaxonomy> {
        match &self.taxonomy {
            Some(p) => ClassTaxonomy::load(p).map_err(config_err),
            None => Ok(ClassTaxonomy::default()),
        }
    }

    /// SHA-256 of the canonical JSON form, leaving out where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            seed: self.seed,
            ..self.estimator.fit.clone()
        }
    }
}
