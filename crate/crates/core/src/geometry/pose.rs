use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// Rigid transform `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (within 1e-9 per entry).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = PoseSE3 {
            rotation,
            translation,
        };
        if !translation.iter().all(|x| x.is_finite()) || !pose.is_valid() {
            return Err(Error::Pose(format!("not a rigid transform: {rotation}")));
        }
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pose from an axis-angle 3-vector and a translation.
    pub fn from_axis_angle(axis_angle: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        PoseSE3 {
            rotation: rotation_from_axis_angle(axis_angle),
            translation,
        }
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        if !r.iter().all(|x| x.is_finite()) {
            return false;
        }
        let gram = r.transpose() * r - Matrix3::identity();
        gram.iter().all(|x| x.abs() <= ORTHO_TOL) && (r.determinant() - 1.0).abs() <= ORTHO_TOL
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`. The rotation of
    /// the result is projected back onto SO(3).
    pub fn compose(&self, other: &PoseSE3) -> Self {
        let mut out = self.compose_raw(other);
        out.rotation = nearest_rotation_newton(&out.rotation);
        out
    }

    /// Composition without re-orthonormalization; used on differentiable
    /// paths where the exact product is needed.
    #[inline]
    pub fn compose_raw(&self, other: &PoseSE3) -> Self {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        rotation_to_axis_angle(&self.rotation)
    }

    pub fn rotation_angle(&self) -> f64 {
        self.axis_angle().norm()
    }

    /// Nearest proper rotation (polar factor) via SVD, for inputs that may
    /// be far from orthonormal.
    pub fn orthonormalized(&self) -> Self {
        PoseSE3 {
            rotation: nearest_rotation_svd(&self.rotation),
            translation: self.translation,
        }
    }

    /// Max absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Same motion with translation scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        PoseSE3 {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula with series expansions near zero.
pub fn rotation_from_axis_angle(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = rodrigues_coefficients(w.norm_squared());
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Coefficients of `R = I + A[w]x + B[w]x²` and their derivatives divided by
/// θ, i.e. `(A, B, A'(θ)/θ, B'(θ)/θ)`, as functions of θ².
pub(crate) fn rodrigues_coefficients(theta_sq: f64) -> (f64, f64, f64, f64) {
    if theta_sq < 1e-6 {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        let a = 1.0 - t2 / 6.0 + t4 / 120.0;
        let b = 0.5 - t2 / 24.0 + t4 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0;
        let db = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0;
        (a, b, da, db)
    } else {
        let t = theta_sq.sqrt();
        let (s, c) = t.sin_cos();
        let a = s / t;
        let b = (1.0 - c) / theta_sq;
        let da = (t * c - s) / (theta_sq * t);
        let db = (t * s - 2.0 * (1.0 - c)) / (theta_sq * theta_sq);
        (a, b, da, db)
    }
}

/// Partial derivatives `∂R/∂w_k` of the axis-angle map.
pub(crate) fn rotation_axis_angle_derivatives(w: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (a, b, da, db) = rodrigues_coefficients(w.norm_squared());
    let k = skew(w);
    let k2 = k * k;
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    basis.map(|e| {
        let ek = skew(&e);
        let wk = w.dot(&e);
        ek * a + (ek * k + k * ek) * b + k * (da * wk) + k2 * (db * wk)
    })
}

pub fn rotation_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return v * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return v * (theta / (2.0 * theta.sin()));
    }
    // near π: axis from the symmetric part
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let mut axis = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]).map(|x| x.max(0.0).sqrt());
    if b[(0, 1)] < 0.0 {
        axis.y = -axis.y;
    }
    if b[(0, 2)] < 0.0 {
        axis.z = -axis.z;
    }
    if axis.x == 0.0 && b[(1, 2)] < 0.0 {
        axis.z = -axis.z;
    }
    let n = axis.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    let axis = axis / n;
    if axis.dot(&v) < 0.0 {
        -axis * theta
    } else {
        axis * theta
    }
}

/// Two Newton-Schulz steps towards the polar factor; exact to rounding for
/// matrices within ~1e-3 of orthonormal.
fn nearest_rotation_newton(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut m = *r;
    for _ in 0..2 {
        m = m * (Matrix3::identity() * 3.0 - m.transpose() * m) * 0.5;
    }
    m
}

fn nearest_rotation_svd(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        m = u * vt;
    }
    m
}
