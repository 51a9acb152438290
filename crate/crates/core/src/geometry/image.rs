use serde::{Deserialize, Serialize};

use super::camera::MIN_DEPTH;
use crate::{Error, Result};

/// RGB frame with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub timestamp_index: usize,
}

/// Per-pixel depth with an explicit validity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Row-major boolean grid (masks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>, timestamp_index: usize) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape {
                expected: (width, height),
                found: (pixels.len(), 1),
            });
        }
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Parameter("frame channel values must lie in [0, 1]".into()));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp_index,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Frame {
            width,
            height,
            pixels: vec![color; width * height],
            timestamp_index: 0,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Frame {
            width,
            height,
            pixels,
            timestamp_index: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }
}

impl DepthMap {
    /// Wraps raw values; entries that are non-finite or below
    /// [`MIN_DEPTH`] are marked invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape {
                expected: (width, height),
                found: (values.len(), 1),
            });
        }
        let valid = values.iter().map(|&d| d.is_finite() && d >= MIN_DEPTH).collect();
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self::from_values(width, height, vec![depth; width * height]).expect("sized")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::from_values(width, height, values).expect("sized")
    }

    /// All-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn set(&mut self, i: usize, depth: f64) {
        self.values[i] = depth;
        self.valid[i] = depth.is_finite() && depth >= MIN_DEPTH;
    }

    pub fn invalidate(&mut self, i: usize) {
        self.valid[i] = false;
    }
}

impl BoolGrid {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BoolGrid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &BoolGrid) -> BoolGrid {
        BoolGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }
}

/// Bilinear cell: top-left corner and fractional offsets. Offsets lie in
/// [0, 1] for in-bounds samples; a frozen cell may be evaluated with offsets
/// outside that range (polynomial extension of the same cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleCell {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

impl SampleCell {
    /// Locates the cell containing `(u, v)`; `None` outside
    /// `[0, W−1] × [0, H−1]`.
    #[inline]
    pub fn locate(u: f64, v: f64, width: usize, height: usize) -> Option<Self> {
        // absorb round-off from a lift/project round trip at the border
        const EDGE: f64 = 1e-9;
        let (wm, hm) = ((width - 1) as f64, (height - 1) as f64);
        if !(u >= -EDGE && v >= -EDGE && u <= wm + EDGE && v <= hm + EDGE) {
            return None;
        }
        let (u, v) = (u.clamp(0.0, wm), v.clamp(0.0, hm));
        let x0 = (u.floor() as usize).min(width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(height.saturating_sub(2));
        Some(Self::frozen(x0, y0, u, v, width, height))
    }

    /// Cell with a fixed corner, evaluated at `(u, v)`.
    #[inline]
    pub fn frozen(x0: usize, y0: usize, u: f64, v: f64, width: usize, height: usize) -> Self {
        SampleCell {
            x0,
            y0,
            x1: (x0 + 1).min(width - 1),
            y1: (y0 + 1).min(height - 1),
            fx: u - x0 as f64,
            fy: v - y0 as f64,
        }
    }

    /// Weights of corners (00, 10, 01, 11).
    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }

    /// Flat indices of corners (00, 10, 01, 11).
    #[inline]
    pub fn indices(&self, width: usize) -> [usize; 4] {
        [
            self.y0 * width + self.x0,
            self.y0 * width + self.x1,
            self.y1 * width + self.x0,
            self.y1 * width + self.x1,
        ]
    }

    #[inline]
    pub fn interpolate(&self, c: [f64; 4]) -> f64 {
        let w = self.weights();
        w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3]
    }

    /// Partial derivatives of the interpolant w.r.t. `u` and `v`.
    #[inline]
    pub fn gradient(&self, c: [f64; 4]) -> (f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let du = (1.0 - fy) * (c[1] - c[0]) + fy * (c[3] - c[2]);
        let dv = (1.0 - fx) * (c[2] - c[0]) + fx * (c[3] - c[1]);
        (du, dv)
    }
}

/// Bilinear sampling at continuous pixel coordinates; samples outside the
/// image (or touching invalid data) are `None`, never clamped.
pub trait BilinearSample {
    type Value;
    fn bilinear_sample(&self, u: f64, v: f64) -> Option<Self::Value>;
}

impl BilinearSample for Frame {
    type Value = [f64; 3];

    fn bilinear_sample(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        let cell = SampleCell::locate(u, v, self.width, self.height)?;
        Some(sample_frame_cell(self, &cell))
    }
}

impl BilinearSample for DepthMap {
    type Value = f64;

    fn bilinear_sample(&self, u: f64, v: f64) -> Option<f64> {
        let cell = SampleCell::locate(u, v, self.width, self.height)?;
        sample_depth_cell(self, &cell)
    }
}

#[inline]
pub(crate) fn frame_corners(frame: &Frame, cell: &SampleCell) -> [[f64; 3]; 4] {
    cell.indices(frame.width).map(|i| frame.pixels[i])
}

#[inline]
pub(crate) fn sample_frame_cell(frame: &Frame, cell: &SampleCell) -> [f64; 3] {
    let c = frame_corners(frame, cell);
    std::array::from_fn(|ch| cell.interpolate([c[0][ch], c[1][ch], c[2][ch], c[3][ch]]))
}

/// Interpolated depth; `None` when a corner with non-zero weight is invalid.
#[inline]
pub(crate) fn sample_depth_cell(depth: &DepthMap, cell: &SampleCell) -> Option<f64> {
    let idx = cell.indices(depth.width);
    let w = cell.weights();
    for k in 0..4 {
        if w[k] != 0.0 && !depth.valid[idx[k]] {
            return None;
        }
    }
    Some(cell.interpolate(idx.map(|i| if depth.valid[i] { depth.values[i] } else { 0.0 })))
}
