use nalgebra::{Matrix3, Vector3};

use super::pair::{self, Branches, PairInputs};
use super::{AdjointFaults, LossBreakdown, LossWeights};
use crate::geometry::pose::rotation_axis_angle_derivatives;
use crate::geometry::{CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::{Error, Result};

/// `ln(1 + eˣ)`, computed without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decodes a coarse grid of raw values into a full-resolution depth map:
/// corner-aligned bilinear upsampling, then `D = 1 / softplus(raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthDecoder {
    pub coarse_width: usize,
    pub coarse_height: usize,
    pub width: usize,
    pub height: usize,
}

struct Tap {
    i0: usize,
    i1: usize,
    f: f64,
}

fn taps(coarse: usize, fine: usize) -> Vec<Tap> {
    (0..fine)
        .map(|x| {
            if coarse == 1 || fine == 1 {
                return Tap { i0: 0, i1: 0, f: 0.0 };
            }
            let u = x as f64 * (coarse - 1) as f64 / (fine - 1) as f64;
            let i0 = (u.floor() as usize).min(coarse - 2);
            Tap {
                i0,
                i1: i0 + 1,
                f: u - i0 as f64,
            }
        })
        .collect()
}

impl DepthDecoder {
    pub fn new(coarse_width: usize, coarse_height: usize, width: usize, height: usize) -> Result<Self> {
        if coarse_width == 0 || coarse_height == 0 || coarse_width > width || coarse_height > height {
            return Err(Error::Parameter(format!(
                "coarse grid {coarse_width}x{coarse_height} does not fit a {width}x{height} image"
            )));
        }
        Ok(DepthDecoder {
            coarse_width,
            coarse_height,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.coarse_width * self.coarse_height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn upsample(&self, raw: &[f64]) -> Vec<f64> {
        let tx = taps(self.coarse_width, self.width);
        let ty = taps(self.coarse_height, self.height);
        let cw = self.coarse_width;
        let mut out = Vec::with_capacity(self.width * self.height);
        for ay in &ty {
            for ax in &tx {
                let v00 = raw[ay.i0 * cw + ax.i0];
                let v10 = raw[ay.i0 * cw + ax.i1];
                let v01 = raw[ay.i1 * cw + ax.i0];
                let v11 = raw[ay.i1 * cw + ax.i1];
                let top = v00 + (v10 - v00) * ax.f;
                let bottom = v01 + (v11 - v01) * ax.f;
                out.push(top + (bottom - top) * ay.f);
            }
        }
        out
    }

    pub fn decode(&self, raw: &[f64]) -> Result<DepthMap> {
        if raw.len() != self.len() {
            return Err(Error::Parameter(format!("expected {} raw values, got {}", self.len(), raw.len())));
        }
        let values = self.upsample(raw).into_iter().map(|r| 1.0 / softplus(r)).collect();
        DepthMap::from_values(self.width, self.height, values)
    }

    /// Pulls a gradient w.r.t. the decoded depth back to the raw grid.
    pub fn adjoint(&self, raw: &[f64], g_depth: &[f64]) -> Vec<f64> {
        let up = self.upsample(raw);
        let tx = taps(self.coarse_width, self.width);
        let ty = taps(self.coarse_height, self.height);
        let cw = self.coarse_width;
        let mut g = vec![0.0; self.len()];
        for (y, ay) in ty.iter().enumerate() {
            for (x, ax) in tx.iter().enumerate() {
                let i = y * self.width + x;
                let sp = softplus(up[i]);
                let gu = -g_depth[i] * sigmoid(up[i]) / (sp * sp);
                g[ay.i0 * cw + ax.i0] += gu * (1.0 - ax.f) * (1.0 - ay.f);
                g[ay.i0 * cw + ax.i1] += gu * ax.f * (1.0 - ay.f);
                g[ay.i1 * cw + ax.i0] += gu * (1.0 - ax.f) * ay.f;
                g[ay.i1 * cw + ax.i1] += gu * ax.f * ay.f;
            }
        }
        g
    }
}

/// Axis-angle rotation followed by translation, as one 6-vector `(ω, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseParams(pub [f64; 6]);

impl PoseParams {
    pub fn pose(&self) -> PoseSE3 {
        let p = &self.0;
        PoseSE3::from_axis_angle(&Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5]))
    }

    pub fn from_pose(pose: &PoseSE3) -> Self {
        let w = pose.axis_angle();
        let t = pose.translation;
        PoseParams([w.x, w.y, w.z, t.x, t.y, t.z])
    }
}

/// Gradient w.r.t. the 6 pose parameters from the gradient w.r.t. the raw
/// rotation matrix and translation.
pub fn pose_adjoint_to_params(params: &PoseParams, g_rotation: &Matrix3<f64>, g_translation: &Vector3<f64>) -> [f64; 6] {
    let p = &params.0;
    let d = rotation_axis_angle_derivatives(&Vector3::new(p[0], p[1], p[2]));
    [
        g_rotation.component_mul(&d[0]).sum(),
        g_rotation.component_mul(&d[1]).sum(),
        g_rotation.component_mul(&d[2]).sum(),
        g_translation.x,
        g_translation.y,
        g_translation.z,
    ]
}

/// Adjoint of `T = T2 ∘ T1` (unprojected composition). Returns the
/// gradients `((gR2, gt2), (gR1, gt1))`.
#[allow(clippy::type_complexity)]
pub fn compose_adjoint(
    t2: &PoseSE3,
    t1: &PoseSE3,
    g_rotation: &Matrix3<f64>,
    g_translation: &Vector3<f64>,
) -> ((Matrix3<f64>, Vector3<f64>), (Matrix3<f64>, Vector3<f64>)) {
    let g_r2 = g_rotation * t1.rotation.transpose() + g_translation * t1.translation.transpose();
    let r2t = t2.rotation.transpose();
    ((g_r2, *g_translation), (r2t * g_rotation, r2t * g_translation))
}

/// One pair term as a function of a flat parameter vector
/// `θ = [raw_a, raw_b, pose_1, …, pose_n]`, where `T_ab = P_n ∘ … ∘ P_1`.
#[derive(Debug, Clone)]
pub struct PairProblem<'a> {
    pub image_a: &'a Frame,
    pub image_b: &'a Frame,
    pub k: CameraIntrinsics,
    pub decoder: DepthDecoder,
    pub weights: LossWeights,
    /// Number of chained pose blocks.
    pub pose_count: usize,
    #[doc(hidden)]
    pub faults: AdjointFaults,
}

struct Decoded {
    depth_a: DepthMap,
    depth_b: DepthMap,
    poses: Vec<PoseSE3>,
    /// Prefix compositions `C_k = P_k ∘ … ∘ P_1`.
    chain: Vec<PoseSE3>,
}

impl<'a> PairProblem<'a> {
    pub fn new(image_a: &'a Frame, image_b: &'a Frame, k: CameraIntrinsics, decoder: DepthDecoder, pose_count: usize) -> Self {
        PairProblem {
            image_a,
            image_b,
            k,
            decoder,
            weights: LossWeights::default(),
            pose_count,
            faults: AdjointFaults::default(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.decoder.len() + 6 * self.pose_count
    }

    fn decode(&self, theta: &[f64]) -> Result<Decoded> {
        if theta.len() != self.parameter_count() {
            return Err(Error::Parameter(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("parameter {i} is not finite")));
        }
        let n = self.decoder.len();
        let poses: Vec<PoseSE3> = theta[2 * n..]
            .chunks_exact(6)
            .map(|c| PoseParams(c.try_into().expect("chunk of 6")).pose())
            .collect();
        let mut chain: Vec<PoseSE3> = Vec::with_capacity(poses.len());
        for p in &poses {
            let next = match chain.last() {
                Some(prev) => p.compose_raw(prev),
                None => *p,
            };
            chain.push(next);
        }
        Ok(Decoded {
            depth_a: self.decoder.decode(&theta[..n])?,
            depth_b: self.decoder.decode(&theta[n..2 * n])?,
            poses,
            chain,
        })
    }

    fn run(&self, theta: &[f64], frozen: Option<&Branches>, want_grad: bool) -> Result<(Decoded, pair::PairEval)> {
        let d = self.decode(theta)?;
        let pose_ab = d.chain.last().copied().unwrap_or_default();
        let inputs = PairInputs {
            image_a: self.image_a,
            image_b: self.image_b,
            depth_a: &d.depth_a,
            depth_b: &d.depth_b,
            pose_ab: &pose_ab,
            k: &self.k,
            weights: &self.weights,
            faults: self.faults,
        };
        let eval = pair::evaluate(&inputs, frozen, want_grad)?;
        Ok((d, eval))
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<(LossBreakdown, Branches)> {
        let (_, e) = self.run(theta, None, false)?;
        Ok((e.breakdown, e.branches))
    }

    /// Total objective on the smooth piece described by `branches`.
    pub fn evaluate_frozen(&self, theta: &[f64], branches: &Branches) -> Result<f64> {
        Ok(self.run(theta, Some(branches), false)?.1.breakdown.total)
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<(LossBreakdown, Vec<f64>, Branches)> {
        let (d, e) = self.run(theta, None, true)?;
        let g = e.grad.expect("requested");
        let n = self.decoder.len();
        let mut out = Vec::with_capacity(theta.len());
        out.extend(self.decoder.adjoint(&theta[..n], &g.depth_a));
        out.extend(self.decoder.adjoint(&theta[n..2 * n], &g.depth_b));

        let mut pose_grads = vec![[0.0; 6]; d.poses.len()];
        let (mut g_r, mut g_t) = (g.rotation, g.translation);
        for k in (0..d.poses.len()).rev() {
            let (g_rk, g_tk) = if k == 0 {
                (g_r, g_t)
            } else {
                let ((g_r2, g_t2), (g_r1, g_t1)) = compose_adjoint(&d.poses[k], &d.chain[k - 1], &g_r, &g_t);
                g_r = g_r1;
                g_t = g_t1;
                (g_r2, g_t2)
            };
            let params = PoseParams(theta[2 * n + 6 * k..2 * n + 6 * k + 6].try_into().expect("6"));
            pose_grads[k] = pose_adjoint_to_params(&params, &g_rk, &g_tk);
        }
        out.extend(pose_grads.into_iter().flatten());
        Ok((e.breakdown, out, e.branches))
    }
}

/// Analytic gradient of the pair objective w.r.t. the flat parameters.
pub fn objective_gradient(parameters: &[f64], problem: &PairProblem<'_>) -> Result<Vec<f64>> {
    Ok(problem.gradient(parameters)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.1, 0.5, 2.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!(softplus(-800.0) > 0.0 || softplus(-800.0) == 0.0);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn decoder_is_positive_and_exact_at_nodes() {
        let dec = DepthDecoder::new(3, 2, 9, 5).unwrap();
        let raw = [-30.0, 0.0, 3.0, 1.0, -1.0, 50.0];
        let d = dec.decode(&raw).unwrap();
        assert_eq!(d.valid_count(), 45);
        assert!(d.values.iter().all(|v| *v > 0.0));
        assert_eq!(d.values[4], 1.0 / softplus(0.0));
        assert_eq!(d.values[44], 1.0 / softplus(50.0));
    }

    #[test]
    fn decoder_adjoint_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dec = DepthDecoder::new(4, 3, 10, 7).unwrap();
        let raw: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |r: &[f64]| -> f64 { dec.decode(r).unwrap().values.iter().zip(&weights).map(|(a, b)| a * b).sum() };
        let g = dec.adjoint(&raw, &weights);
        for i in 0..12 {
            let mut p = raw.clone();
            p[i] += 1e-6;
            let mut m = raw.clone();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn pose_and_compose_adjoints_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p1 = PoseParams(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
        let p2 = PoseParams(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
        let wr = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let wt = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        // scalar test function of the composed pose
        let f = |a: &PoseParams, b: &PoseParams| {
            let t = b.pose().compose_raw(&a.pose());
            t.rotation.component_mul(&wr).sum() + t.translation.dot(&wt)
        };
        let ((g_r2, g_t2), (g_r1, g_t1)) = compose_adjoint(&p2.pose(), &p1.pose(), &wr, &wt);
        let g1 = pose_adjoint_to_params(&p1, &g_r1, &g_t1);
        let g2 = pose_adjoint_to_params(&p2, &g_r2, &g_t2);
        for i in 0..6 {
            let h = 1e-6;
            let bump = |p: &PoseParams, s: f64| {
                let mut q = *p;
                q.0[i] += s;
                q
            };
            let fd1 = (f(&bump(&p1, h), &p2) - f(&bump(&p1, -h), &p2)) / (2.0 * h);
            let fd2 = (f(&p1, &bump(&p2, h)) - f(&p1, &bump(&p2, -h))) / (2.0 * h);
            assert!((fd1 - g1[i]).abs() < 1e-8, "p1[{i}]: {fd1} vs {}", g1[i]);
            assert!((fd2 - g2[i]).abs() < 1e-8, "p2[{i}]: {fd2} vs {}", g2[i]);
        }
    }
}
