//! Procedural heightfield reef scenes, ego-motion trajectories and a
//! ray-casting renderer with exact depth, pose and labels.

mod noise;
mod render;
mod scene;
mod trajectory;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::CameraIntrinsics;
use crate::{Error, Result};

pub use render::{render_frame, render_sequence, RenderedView};
pub use scene::{generate_scene, Marker, MarkerPair, SyntheticScene};
pub use trajectory::{generate_trajectory, pitch_deg, TrajectorySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 152,
            height: 88,
            horizontal_fov_deg: 60.0,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.width, self.height, self.horizontal_fov_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Heightfield and texture grid spacing.
    pub texel: f64,
    /// Scene extent behind the first and ahead of the last camera position.
    pub margin_behind: f64,
    pub margin_ahead: f64,
    /// Half the scene extent across the direction of travel.
    pub half_width: f64,
    pub terrain_amplitude: f64,
    pub terrain_wavelength: f64,
    /// Size of class patches.
    pub class_wavelength: f64,
    /// Multiplies the per-class relief (0 gives a flat class layout).
    pub relief_scale: f64,
    /// Strength of the multiplicative value-noise texture.
    pub texture_contrast: f64,
    /// Blue-green tint applied with increasing water depth.
    pub tint: f64,
    /// Requested class cover fractions by class name; must sum to 1.
    pub cover: BTreeMap<String, f64>,
    pub marker_count: usize,
    pub marker_pairs: usize,
    pub min_marker_distance: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let cover = [
            ("sand", 0.28),
            ("rubble", 0.08),
            ("rock", 0.10),
            ("macroalgae", 0.06),
            ("dead coral", 0.08),
            ("soft coral", 0.06),
            ("branching coral", 0.16),
            ("massive coral", 0.18),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SceneConfig {
            texel: 0.01,
            margin_behind: 0.6,
            margin_ahead: 1.4,
            half_width: 0.75,
            terrain_amplitude: 0.06,
            terrain_wavelength: 1.5,
            class_wavelength: 0.8,
            relief_scale: 1.0,
            texture_contrast: 0.7,
            tint: 0.25,
            cover,
            marker_count: 10,
            marker_pairs: 12,
            min_marker_distance: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub camera: CameraConfig,
    pub scene: SceneConfig,
    pub trajectory: TrajectorySpec,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        let positive = [s.texel, s.half_width, s.terrain_wavelength, s.class_wavelength];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || s.margin_behind < 0.0
            || s.margin_ahead < 0.0
            || s.terrain_amplitude < 0.0
            || s.relief_scale < 0.0
            || !(0.0..=1.0).contains(&s.texture_contrast)
            || !(0.0..=1.0).contains(&s.tint)
        {
            return Err(Error::Config(format!("invalid scene settings {s:?}")));
        }
        let total: f64 = s.cover.values().sum();
        if s.cover.is_empty() || (total - 1.0).abs() > 1e-9 || s.cover.values().any(|v| *v < 0.0) {
            return Err(Error::Config(format!("cover fractions sum to {total}, expected 1")));
        }
        self.camera.intrinsics()?;
        self.trajectory.validate()
    }
}
