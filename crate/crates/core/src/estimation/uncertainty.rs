use std::ops::Range;

use super::{Estimator, WINDOW_SPAN};
use crate::geometry::{check_dims, warp_depth, BoolGrid, CameraIntrinsics, DepthMap};
use crate::{Error, Result};

/// Per-pixel unbiased variance across overlapping depth estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    /// Zero where fewer than two samples exist.
    pub variance: Vec<f64>,
    pub sample_count: Vec<usize>,
}

impl UncertaintyMap {
    /// Variance, or `None` when fewer than two samples were seen.
    pub fn get(&self, i: usize) -> Option<f64> {
        (self.sample_count[i] >= 2).then_some(self.variance[i])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn defined_count(&self) -> usize {
        self.sample_count.iter().filter(|c| **c >= 2).count()
    }
}

/// Per-pixel sample variance over the estimates valid at each pixel.
pub fn depth_uncertainty(estimates: &[DepthMap]) -> Result<UncertaintyMap> {
    let Some(first) = estimates.first() else {
        return Err(Error::Degenerate("no depth estimates".into()));
    };
    let (w, h) = first.dims();
    for e in estimates {
        check_dims((w, h), e.dims())?;
    }
    let mut variance = vec![0.0; w * h];
    let mut sample_count = vec![0; w * h];
    for i in 0..w * h {
        let samples = estimates.iter().filter(|e| e.valid[i]).map(|e| e.values[i]);
        let n = samples.clone().count();
        sample_count[i] = n;
        if n < 2 {
            continue;
        }
        // shifted by the first sample so identical estimates give exactly 0
        let shift = samples.clone().next().unwrap_or(0.0);
        let mean = samples.clone().map(|x| x - shift).sum::<f64>() / n as f64;
        variance[i] = samples.map(|x| (x - shift - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(UncertaintyMap {
        width: w,
        height: h,
        variance,
        sample_count,
    })
}

/// Window estimates whose spread is below this fraction of the depth agree
/// to within numerical resolution (warp interpolation, f32 storage); their
/// variance is reported as zero.
pub const AGREEMENT_TOLERANCE: f64 = 1e-4;

/// Start indices of the 7-frame windows of an `n`-frame sequence that
/// contain `frame`.
pub fn window_starts(frame: usize, n: usize) -> Range<usize> {
    if n < WINDOW_SPAN || frame >= n {
        return 0..0;
    }
    frame.saturating_sub(WINDOW_SPAN - 1)..frame.min(n - WINDOW_SPAN) + 1
}

/// Uncertainty of one frame's depth from window-conditioned re-decodings.
///
/// Each window containing the frame yields one estimate: the mean, per
/// pixel, of every window member's depth forward-warped into this frame
/// with the backend's chained poses. The variance is taken across windows.
pub fn frame_uncertainty(backend: &dyn Estimator, k: &CameraIntrinsics, frame: usize) -> Result<UncertaintyMap> {
    let n = backend.frame_count();
    let starts = window_starts(frame, n);
    let own = backend.depth(frame)?;
    check_dims(k.dims(), own.dims())?;
    if starts.is_empty() {
        return depth_uncertainty(&[own]);
    }
    let lo = starts.start;
    let hi = starts.end - 1 + WINDOW_SPAN;
    let mut warped = Vec::with_capacity(hi - lo);
    for j in lo..hi {
        if j == frame {
            warped.push(own.clone());
        } else {
            let t = backend.relative_pose(j, frame)?;
            warped.push(warp_depth(&backend.depth(j)?, &t, k)?);
        }
    }
    let (w, h) = k.dims();
    let estimates: Vec<DepthMap> = starts
        .map(|s| {
            let members = &warped[s - lo..s - lo + WINDOW_SPAN];
            let mut values = vec![0.0; w * h];
            for (i, v) in values.iter_mut().enumerate() {
                let (sum, count) = members
                    .iter()
                    .filter(|m| m.valid[i])
                    .fold((0.0, 0usize), |(s, c), m| (s + m.values[i], c + 1));
                if count > 0 && own.valid[i] {
                    *v = sum / count as f64;
                }
            }
            DepthMap::from_values(w, h, values)
        })
        .collect::<Result<_>>()?;
    let mut u = depth_uncertainty(&estimates)?;
    for (i, v) in u.variance.iter_mut().enumerate() {
        if own.valid[i] && v.sqrt() < AGREEMENT_TOLERANCE * own.values[i] {
            *v = 0.0;
        }
    }
    Ok(u)
}

/// `⌈fraction · n⌉`, treating products within 1e-9 of an integer as that
/// integer so that e.g. 0.35 · 100 gives 35.
pub fn filter_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c.max(0.0) as usize).min(n)
}

/// Keep-mask that drops the `⌈fraction · N⌉` valid pixels of highest
/// variance (undefined variance counts as highest). Among equal variances
/// the higher row-major index is dropped first.
pub fn pixel_uncertainty_filter(depth: &DepthMap, uncertainty: &UncertaintyMap, fraction: f64) -> Result<BoolGrid> {
    check_dims(depth.dims(), uncertainty.dims())?;
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("filter fraction {fraction} outside [0, 1)")));
    }
    let mut order: Vec<usize> = (0..depth.values.len()).filter(|&i| depth.valid[i]).collect();
    let remove = filter_count(fraction, order.len());
    let key = |i: usize| uncertainty.get(i).unwrap_or(f64::INFINITY);
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(b.cmp(&a)));
    let mut keep = depth.valid.clone();
    for &i in &order[..remove] {
        keep[i] = false;
    }
    Ok(BoolGrid {
        width: depth.width,
        height: depth.height,
        data: keep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_estimates_have_zero_variance() {
        let d = DepthMap::from_fn(4, 4, |x, y| 1.0 + (x + y) as f64 * 0.1);
        let u = depth_uncertainty(&[d.clone(), d.clone(), d]).unwrap();
        assert!(u.variance.iter().all(|v| *v == 0.0));
        assert_eq!(u.defined_count(), 16);
    }

    #[test]
    fn two_estimates_one_apart() {
        let a = DepthMap::from_fn(3, 3, |x, y| 1.0 + (x * y) as f64);
        let b = DepthMap::from_fn(3, 3, |x, y| 2.0 + (x * y) as f64);
        let u = depth_uncertainty(&[a, b]).unwrap();
        assert!(u.variance.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn single_estimate_is_undefined() {
        let u = depth_uncertainty(&[DepthMap::constant(2, 2, 1.0)]).unwrap();
        assert_eq!(u.defined_count(), 0);
        assert_eq!(u.get(0), None);
    }

    #[test]
    fn window_coverage() {
        assert_eq!(window_starts(6, 13).len(), 7);
        assert_eq!(window_starts(0, 13), 0..1);
        assert_eq!(window_starts(12, 13), 6..7);
        assert_eq!(window_starts(3, 6).len(), 0);
        for n in 13..40 {
            for f in 6..n - 6 {
                assert_eq!(window_starts(f, n).len(), 7);
            }
        }
    }

    #[test]
    fn filter_count_handles_representation_error() {
        assert_eq!(filter_count(0.35, 100), 35);
        assert_eq!(filter_count(0.35, 101), 36);
        assert_eq!(filter_count(0.2, 10), 2);
        assert_eq!(filter_count(0.0, 10), 0);
    }

    fn map(variance: Vec<f64>, w: usize, h: usize) -> UncertaintyMap {
        UncertaintyMap {
            width: w,
            height: h,
            sample_count: vec![7; variance.len()],
            variance,
        }
    }

    #[test]
    fn order_statistic_example() {
        let d = DepthMap::constant(10, 10, 1.0);
        let u = map((1..=100).map(|v| v as f64).collect(), 10, 10);
        let keep = pixel_uncertainty_filter(&d, &u, 0.35).unwrap();
        for i in 0..100 {
            assert_eq!(keep.data[i], i + 1 <= 65, "pixel {i}");
        }
    }

    #[test]
    fn ties_drop_higher_indices() {
        let d = DepthMap::constant(10, 10, 1.0);
        let u = map(vec![0.3; 100], 10, 10);
        let keep = pixel_uncertainty_filter(&d, &u, 0.35).unwrap();
        assert_eq!(keep.count(), 65);
        assert!(keep.data[..65].iter().all(|k| *k));
    }

    #[test]
    fn fraction_zero_keeps_valid_pixels() {
        let mut d = DepthMap::constant(4, 4, 1.0);
        d.invalidate(3);
        let u = map(vec![1.0; 16], 4, 4);
        let keep = pixel_uncertainty_filter(&d, &u, 0.0).unwrap();
        assert_eq!(keep.data, d.valid);
    }
}
