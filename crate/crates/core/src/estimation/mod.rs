//! Depth and pose estimators for sliding 7-frame windows, the
//! self-supervised fit, and window-variance uncertainty.

mod fit;
mod uncertainty;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthMap, PoseSE3};
use crate::objective::{softplus_inverse, DepthDecoder, PoseParams};
use crate::{Error, Result};

pub use fit::{fit_self_supervised, fit_with_init, sequence_losses, FitConfig, FitReport};
pub use uncertainty::{
    depth_uncertainty, filter_count, frame_uncertainty, pixel_uncertainty_filter, window_starts, UncertaintyMap,
};

/// Frames per estimation window.
pub const WINDOW_SPAN: usize = 7;

/// Depths and adjacent-pair poses for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub start: usize,
    pub depths: Vec<DepthMap>,
    /// `pair_poses[i]` maps camera `start + i` coordinates into camera
    /// `start + i + 1`.
    pub pair_poses: Vec<PoseSE3>,
}

/// Source of per-frame depth and adjacent relative pose.
pub trait Estimator: Sync {
    fn frame_count(&self) -> usize;
    fn depth(&self, frame: usize) -> Result<DepthMap>;
    /// `T_{i,i+1}`: camera `i` coordinates into camera `i + 1`.
    fn pair_pose(&self, frame: usize) -> Result<PoseSE3>;

    /// `T_{i,j}` by chaining adjacent poses (either direction).
    fn relative_pose(&self, from: usize, to: usize) -> Result<PoseSE3> {
        if to < from {
            return Ok(self.relative_pose(to, from)?.inverse());
        }
        let mut t = PoseSE3::identity();
        for i in from..to {
            t = self.pair_pose(i)?.compose(&t);
        }
        Ok(t)
    }
}

/// Runs a backend over one 7-frame window.
pub fn estimate(backend: &dyn Estimator, window: Range<usize>) -> Result<WindowEstimate> {
    if window.len() != WINDOW_SPAN {
        return Err(Error::Window(format!(
            "window {window:?} spans {} frames, expected {WINDOW_SPAN}",
            window.len()
        )));
    }
    if window.end > backend.frame_count() {
        return Err(Error::Window(format!(
            "window {window:?} exceeds sequence of {} frames",
            backend.frame_count()
        )));
    }
    let depths = window.clone().map(|i| backend.depth(i)).collect::<Result<Vec<_>>>()?;
    let dims = depths[0].dims();
    if depths.iter().any(|d| d.dims() != dims) {
        return Err(Error::Window("window frames differ in resolution".into()));
    }
    let pair_poses = (window.start..window.end - 1)
        .map(|i| backend.pair_pose(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowEstimate {
        start: window.start,
        depths,
        pair_poses,
    })
}

/// Passes through renderer depths and true poses.
#[derive(Debug, Clone)]
pub struct GroundTruthEstimator {
    pub depths: Vec<DepthMap>,
    /// Camera-to-world pose per frame.
    pub camera_to_world: Vec<PoseSE3>,
}

impl Estimator for GroundTruthEstimator {
    fn frame_count(&self) -> usize {
        self.depths.len()
    }

    fn depth(&self, frame: usize) -> Result<DepthMap> {
        self.depths
            .get(frame)
            .cloned()
            .ok_or_else(|| Error::Window(format!("frame {frame} out of range")))
    }

    fn pair_pose(&self, frame: usize) -> Result<PoseSE3> {
        let (Some(a), Some(b)) = (self.camera_to_world.get(frame), self.camera_to_world.get(frame + 1)) else {
            return Err(Error::Window(format!("no pose pair at frame {frame}")));
        };
        Ok(b.inverse().compose(a))
    }
}

/// Per-sequence parameters of the direct estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParameters {
    pub coarse_width: usize,
    pub coarse_height: usize,
    pub width: usize,
    pub height: usize,
    /// Raw coarse inverse-depth grid per frame, row-major.
    pub depth_raw: Vec<Vec<f64>>,
    /// `(ω, t)` of `T_{i,i+1}` per adjacent pair.
    pub pair_params: Vec<[f64; 6]>,
}

impl EstimatorParameters {
    /// Constant depth everywhere, identity poses.
    pub fn initial(frames: usize, k: &CameraIntrinsics, coarse: (usize, usize), depth: f64) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidDepth(depth));
        }
        DepthDecoder::new(coarse.0, coarse.1, k.width, k.height)?;
        let raw = softplus_inverse(1.0 / depth);
        Ok(EstimatorParameters {
            coarse_width: coarse.0,
            coarse_height: coarse.1,
            width: k.width,
            height: k.height,
            depth_raw: vec![vec![raw; coarse.0 * coarse.1]; frames],
            pair_params: vec![[0.0; 6]; frames.saturating_sub(1)],
        })
    }

    pub fn decoder(&self) -> DepthDecoder {
        DepthDecoder {
            coarse_width: self.coarse_width,
            coarse_height: self.coarse_height,
            width: self.width,
            height: self.height,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.depth_raw.len()
    }

    pub fn depth(&self, frame: usize) -> Result<DepthMap> {
        let raw = self
            .depth_raw
            .get(frame)
            .ok_or_else(|| Error::Window(format!("frame {frame} out of range")))?;
        self.decoder().decode(raw)
    }

    pub fn pair_pose(&self, frame: usize) -> Result<PoseSE3> {
        let p = self
            .pair_params
            .get(frame)
            .ok_or_else(|| Error::Window(format!("no pose pair at frame {frame}")))?;
        Ok(PoseParams(*p).pose())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.depth_raw
            .iter()
            .flatten()
            .chain(self.pair_params.iter().flatten())
            .copied()
            .collect()
    }
}

/// Decodes fitted parameters; errors until parameters are supplied.
#[derive(Debug, Clone, Default)]
pub struct SelfSupervisedEstimator {
    pub parameters: Option<EstimatorParameters>,
}

impl SelfSupervisedEstimator {
    fn params(&self) -> Result<&EstimatorParameters> {
        self.parameters.as_ref().ok_or(Error::NotFitted)
    }
}

impl Estimator for SelfSupervisedEstimator {
    fn frame_count(&self) -> usize {
        self.parameters.as_ref().map_or(0, |p| p.frame_count())
    }

    fn depth(&self, frame: usize) -> Result<DepthMap> {
        self.params()?.depth(frame)
    }

    fn pair_pose(&self, frame: usize) -> Result<PoseSE3> {
        self.params()?.pair_pose(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn gt(n: usize) -> GroundTruthEstimator {
        GroundTruthEstimator {
            depths: (0..n).map(|i| DepthMap::constant(4, 3, 1.0 + i as f64)).collect(),
            camera_to_world: (0..n)
                .map(|i| PoseSE3::from_axis_angle(&Vector3::new(0.0, 0.0, 0.01 * i as f64), Vector3::new(0.1 * i as f64, 0.0, 0.0)))
                .collect(),
        }
    }

    #[test]
    fn ground_truth_window_passes_depths_through() {
        let b = gt(9);
        let w = estimate(&b, 2..9).unwrap();
        assert_eq!(w.depths.len(), 7);
        assert_eq!(w.pair_poses.len(), 6);
        assert_eq!(w.depths[0], b.depths[2]);
    }

    #[test]
    fn short_window_is_rejected() {
        assert!(matches!(estimate(&gt(9), 0..6), Err(Error::Window(_))));
        assert!(matches!(estimate(&gt(9), 3..10), Err(Error::Window(_))));
    }

    #[test]
    fn unfitted_backend_errors() {
        let b = SelfSupervisedEstimator::default();
        assert!(matches!(b.depth(0), Err(Error::NotFitted)));
    }

    #[test]
    fn relative_pose_chains_both_ways() {
        let b = gt(5);
        let fwd = b.relative_pose(1, 4).unwrap();
        let direct = b.camera_to_world[4].inverse().compose(&b.camera_to_world[1]);
        assert!((fwd.rotation - direct.rotation).abs().max() < 1e-12);
        assert!((fwd.translation - direct.translation).abs().max() < 1e-12);
        let back = b.relative_pose(4, 1).unwrap();
        let id = back.compose(&fwd);
        assert!((id.translation).abs().max() < 1e-12);
    }

    #[test]
    fn initial_parameters_decode_to_requested_depth() {
        let k = CameraIntrinsics::from_fov(20, 10, 60.0).unwrap();
        let p = EstimatorParameters::initial(3, &k, (5, 3), 2.0).unwrap();
        let d = p.depth(1).unwrap();
        assert!(d.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert_eq!(p.pair_pose(0).unwrap(), PoseSE3::identity());
    }
}
