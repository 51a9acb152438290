//! Finite-difference oracle for the analytic pair gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{CameraIntrinsics, Frame};
use crate::objective::{softplus_inverse, AdjointFaults, DepthDecoder, LossWeights, PairProblem};
use crate::Result;

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Components smaller than this (in absolute value, on both sides) are
/// compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// A random pair instance at desk scale.
#[derive(Debug, Clone)]
pub struct GradientInstance {
    pub image_a: Frame,
    pub image_b: Frame,
    pub k: CameraIntrinsics,
    pub decoder: DepthDecoder,
    pub pose_count: usize,
    pub theta: Vec<f64>,
}

/// Outcome of comparing analytic and numerical gradients on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub parameters: usize,
    pub max_relative_error: f64,
    /// Stencils that crossed a non-differentiable seam (bilinear cell,
    /// validity or sign change) and were re-evaluated on the branch active at
    /// the centre point.
    pub straddled: usize,
}

fn texture(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let waves: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.random_range(0.2..1.2),
                rng.random_range(0.2..1.2),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.05..0.12),
            ]
        })
        .collect();
    let noise: Vec<[f64; 3]> = (0..w * h)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.08..0.08)))
        .collect();
    let pixels = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            std::array::from_fn(|c| {
                let mut v = 0.5 + noise[i][c];
                for (j, wv) in waves.iter().enumerate() {
                    let phase = wv[2] + c as f64 * (j as f64 + 1.0);
                    v += wv[3] * (wv[0] * x + wv[1] * y + phase).sin();
                }
                v.clamp(0.0, 1.0)
            })
        })
        .collect();
    Frame::new(w, h, pixels, 0).expect("clamped texture")
}

impl GradientInstance {
    /// Image side in 8..=32, coarse grids sized so the parameter count stays
    /// within 10..=200, one or two chained pose blocks.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rng.random_range(8..=32usize);
        let h = rng.random_range(8..=32usize);
        let pose_count = rng.random_range(1..=2usize);
        let budget = 200 - 6 * pose_count;
        let (cw, ch) = loop {
            let cw = rng.random_range(2..=w.min(9));
            let ch = rng.random_range(1..=h.min(9));
            if 2 * cw * ch <= budget {
                break (cw, ch);
            }
        };
        let k = CameraIntrinsics::from_fov(w, h, rng.random_range(50.0..70.0)).expect("valid fov");
        let decoder = DepthDecoder::new(cw, ch, w, h).expect("coarse fits");
        let mut theta = Vec::new();
        for _ in 0..2 {
            let base = rng.random_range(1.5..3.0);
            for _ in 0..cw * ch {
                let d: f64 = base * rng.random_range(0.85..1.15);
                theta.push(softplus_inverse(1.0 / d));
            }
        }
        for _ in 0..pose_count {
            for _ in 0..3 {
                theta.push(rng.random_range(-0.04..0.04));
            }
            for _ in 0..3 {
                theta.push(rng.random_range(-0.12..0.12));
            }
        }
        GradientInstance {
            image_a: texture(&mut rng, w, h),
            image_b: texture(&mut rng, w, h),
            k,
            decoder,
            pose_count,
            theta,
        }
    }

    pub fn problem(&self, weights: LossWeights, faults: AdjointFaults) -> PairProblem<'_> {
        let mut p = PairProblem::new(&self.image_a, &self.image_b, self.k, self.decoder, self.pose_count);
        p.weights = weights;
        p.faults = faults;
        p
    }
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient against central differences.
///
/// Where the plain stencil changes any discrete choice of the objective, the
/// two stencil points are re-evaluated with the branches recorded at `θ`, so
/// the difference quotient measures the same smooth piece the analytic
/// gradient differentiates.
pub fn check_gradient(problem: &PairProblem<'_>, theta: &[f64], step: f64) -> Result<GradientCheck> {
    let (_, analytic, branches) = problem.gradient(theta)?;
    let per_param: Vec<Result<(f64, bool)>> = (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let mut plus = theta.to_vec();
            plus[i] += step;
            let mut minus = theta.to_vec();
            minus[i] -= step;
            let plain = problem.evaluate(&plus).and_then(|p| Ok((p, problem.evaluate(&minus)?)));
            if let Ok(((fp, bp), (fm, bm))) = plain {
                if bp == branches && bm == branches {
                    return Ok(((fp.total - fm.total) / (2.0 * step), false));
                }
            }
            let fp = problem.evaluate_frozen(&plus, &branches)?;
            let fm = problem.evaluate_frozen(&minus, &branches)?;
            Ok(((fp - fm) / (2.0 * step), true))
        })
        .collect();
    let mut max_rel: f64 = 0.0;
    let mut straddled = 0;
    for (i, r) in per_param.into_iter().enumerate() {
        let (numeric, crossed) = r?;
        straddled += crossed as usize;
        max_rel = max_rel.max(relative_error(analytic[i], numeric));
    }
    Ok(GradientCheck {
        parameters: theta.len(),
        max_relative_error: max_rel,
        straddled,
    })
}
