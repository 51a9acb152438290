//! Self-supervised pair objective.
//!
//! For a pair `(a, b)` with relative pose `T_ab` (camera a → camera b):
//!
//! ```text
//! total = w_p·(L_P(I_a, Î_a) + L_P(I_b, Î_b)) + w_s·(R_S(I_a, D_a) + R_S(I_b, D_b)) + w_g·R_G(D_a, D_b, T_ab)
//! ```
//!
//! `Î_a` is synthesized from `I_b` using `D_a` and `T_ab`; `Î_b` from `I_a`
//! using `D_b` and `T_ab⁻¹`. Gradients are accumulated in reverse through
//! the fixed graph (sampling, projection, rigid motion, depth decoding).

mod pair;
mod params;
mod photometric;
mod smoothness;

use serde::{Deserialize, Serialize};

use crate::geometry::{BoolGrid, CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::Result;

pub use pair::{Branches, PairGradient};
pub use params::{
    compose_adjoint, objective_gradient, pose_adjoint_to_params, softplus, softplus_inverse, DepthDecoder,
    PairProblem, PoseParams,
};

/// SSIM stabilisers for signals in [0, 1].
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Guard added to ratio denominators.
pub const DIVISION_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// SSIM share of the photometric term.
    pub alpha: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub geometric: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.85,
            photometric: 1.0,
            smoothness: 0.1,
            geometric: 0.5,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            alpha: 0.85,
            photometric: 0.0,
            smoothness: 0.0,
            geometric: 0.0,
        }
    }
}

/// Components of the pair objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `L_P(I_a, Î_a)`, synthesized with `T_ab`.
    pub photometric_ab: f64,
    /// `L_P(I_b, Î_b)`, synthesized with `T_ab⁻¹`.
    pub photometric_ba: f64,
    pub smooth_a: f64,
    pub smooth_b: f64,
    pub geometric: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
}

impl LossBreakdown {
    pub(crate) fn with_total(mut self, w: &LossWeights) -> Self {
        self.total = w.photometric * (self.photometric_ab + self.photometric_ba)
            + w.smoothness * (self.smooth_a + self.smooth_b)
            + w.geometric * self.geometric;
        self
    }
}

/// Sign flips injected into individual adjoints. Only used to prove that
/// the gradient checks detect a broken adjoint.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdjointFaults {
    pub flip_l1: bool,
    pub flip_ssim: bool,
    pub flip_smoothness: bool,
    pub flip_geometric: bool,
    pub flip_rotation: bool,
}

/// Photometric dissimilarity `α·(1−SSIM)/2 + (1−α)·|I−Î|` averaged over the
/// masked pixels and the three channels. SSIM uses 3×3 windows restricted to
/// masked pixels.
pub fn photometric_loss(image: &Frame, synthesized: &Frame, mask: &BoolGrid, alpha: f64) -> Result<f64> {
    crate::geometry::check_dims(image.dims(), synthesized.dims())?;
    crate::geometry::check_dims(image.dims(), (mask.width, mask.height))?;
    let eval = photometric::evaluate(
        &image.pixels,
        &synthesized.pixels,
        &mask.data,
        image.width,
        image.height,
        alpha,
        None,
        false,
        AdjointFaults::default(),
    )?;
    Ok(eval.value)
}

/// Edge-aware first-order smoothness of mean-normalized inverse depth.
pub fn smoothness_reg(image: &Frame, depth: &DepthMap) -> Result<f64> {
    crate::geometry::check_dims(image.dims(), depth.dims())?;
    Ok(smoothness::evaluate(image, depth, None, false, AdjointFaults::default())?.value)
}

/// Geometric consistency of `D_a` against `D_b` under `T_ab`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricConsistency {
    pub value: f64,
    /// Per-pixel `|z − D_b(q)| / (z + D_b(q))` on frame a's grid.
    pub map: Vec<f64>,
    pub valid: Vec<bool>,
}

/// For every pixel of frame a, the depth of its point as seen from camera b
/// (`z`) is compared against `D_b` sampled where that point projects.
pub fn geometric_consistency(
    depth_a: &DepthMap,
    depth_b: &DepthMap,
    pose_ab: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<GeometricConsistency> {
    pair::geometric_only(depth_a, depth_b, pose_ab, k)
}

/// Evaluates every component of the pair objective.
pub fn total_objective(
    image_a: &Frame,
    image_b: &Frame,
    depth_a: &DepthMap,
    depth_b: &DepthMap,
    pose_ab: &PoseSE3,
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let inputs = pair::PairInputs {
        image_a,
        image_b,
        depth_a,
        depth_b,
        pose_ab,
        k,
        weights,
        faults: AdjointFaults::default(),
    };
    Ok(pair::evaluate(&inputs, None, false)?.breakdown)
}
