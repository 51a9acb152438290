use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Depths below this many scene units are treated as invalid.
pub const MIN_DEPTH: f64 = 1e-6;

/// Linear pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub in_front: bool,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with square pixels, the principal point at the image
    /// centre and the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, horizontal_fov_deg: f64) -> Result<Self> {
        let half = (horizontal_fov_deg.to_radians() / 2.0).tan();
        let f = width as f64 / 2.0 / half;
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Unit-depth ray through a (possibly fractional) pixel.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Lifts an integer pixel at the given depth into the camera frame.
    pub fn backproject(&self, pixel: (usize, usize), depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        if pixel.0 >= self.width || pixel.1 >= self.height {
            return Err(Error::Parameter(format!(
                "pixel {pixel:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray(pixel.0 as f64, pixel.1 as f64) * depth)
    }

    #[inline]
    pub fn project(&self, point: &Vector3<f64>) -> Projection {
        if point.z <= 0.0 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                in_front: false,
            };
        }
        Projection {
            u: self.fx * point.x / point.z + self.cx,
            v: self.fy * point.y / point.z + self.cy,
            in_front: true,
        }
    }

    /// Same camera for an image rescaled to `width` x `height`.
    pub fn scaled_to(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn principal_point_maps_to_axis() {
        let p = cam().backproject((50, 50), 3.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn unit_offset_at_unit_depth() {
        let wide = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 101).unwrap();
        let p = wide.backproject((150, 50), 1.0).unwrap();
        assert_eq!(p, Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn hand_evaluated_backprojection() {
        let p = cam().backproject((10, 20), 2.5).unwrap();
        assert!((p.x - -1.0).abs() < 1e-15);
        assert!((p.y - -0.75).abs() < 1e-15);
        assert_eq!(p.z, 2.5);
    }

    #[test]
    fn rejects_non_positive_depth() {
        assert!(matches!(cam().backproject((1, 1), 0.0), Err(Error::InvalidDepth(_))));
        assert!(matches!(cam().backproject((1, 1), -2.0), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn projection_examples() {
        let k = cam();
        let p = k.project(&Vector3::new(0.0, 0.0, 5.0));
        assert!(p.in_front && p.u == 50.0 && p.v == 50.0);
        let p = k.project(&Vector3::new(1.0, 0.0, 1.0));
        assert!(p.in_front && p.u == 150.0 && p.v == 50.0);
        assert!(!k.project(&Vector3::new(0.0, 0.0, -1.0)).in_front);
    }

    #[test]
    fn round_trip_all_pixels() {
        let k = CameraIntrinsics::new(37.3, 41.9, 15.2, 11.7, 32, 24).unwrap();
        for d in [0.1, 1.0, 100.0] {
            for v in 0..k.height {
                for u in 0..k.width {
                    let p = k.project(&k.backproject((u, v), d).unwrap());
                    assert!((p.u - u as f64).abs() < 1e-9 && (p.v - v as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }
}
