use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::PoseSE3;
use crate::{Error, Result};

/// Largest rotation allowed between consecutive frames.
const MAX_FRAME_ROTATION_DEG: f64 = 2.0;

/// Forward sweep over the scene. Heights are absolute (the terrain is
/// centred on zero); pitch is the optical axis angle above the horizontal,
/// so looking down is negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub frame_count: usize,
    pub height_range: [f64; 2],
    pub pitch_range_deg: [f64; 2],
    pub speed: f64,
    pub frame_rate: f64,
    /// Path length over which height and pitch complete one oscillation.
    pub variation_wavelength: f64,
    pub yaw_amplitude_deg: f64,
    pub roll_amplitude_deg: f64,
    /// Scale of the smoothed random yaw/roll/pitch perturbation.
    pub jitter_deg: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            frame_count: 200,
            height_range: [1.3, 1.7],
            pitch_range_deg: [-80.0, -60.0],
            speed: 0.25,
            frame_rate: 10.0,
            variation_wavelength: 2.0,
            yaw_amplitude_deg: 4.0,
            roll_amplitude_deg: 2.0,
            jitter_deg: 0.15,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let [h0, h1] = self.height_range;
        let [p0, p1] = self.pitch_range_deg;
        let ok = self.frame_count > 0
            && h0 > 0.0
            && h1 >= h0
            && (-90.0..=90.0).contains(&p0)
            && (-90.0..=90.0).contains(&p1)
            && p1 >= p0
            && self.speed >= 0.0
            && self.frame_rate > 0.0
            && self.variation_wavelength > 0.0
            && self.jitter_deg >= 0.0
            && (h1 - h0) / 2.0 * TAU / self.variation_wavelength < 1.0
            && [h0, h1, p0, p1, self.speed, self.frame_rate, self.yaw_amplitude_deg, self.roll_amplitude_deg]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::Config(format!("invalid trajectory {self:?}")));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.speed / self.frame_rate
    }

    /// Path length from the first to the last frame.
    pub fn travel(&self) -> f64 {
        self.frame_count.saturating_sub(1) as f64 * self.step()
    }
}

/// Horizontal distance from the camera to where the mean optical axis
/// meets the mean floor.
pub(crate) fn footprint_ahead(spec: &TrajectorySpec) -> f64 {
    let h = (spec.height_range[0] + spec.height_range[1]) / 2.0;
    let p = ((spec.pitch_range_deg[0] + spec.pitch_range_deg[1]) / 2.0).to_radians();
    if p > -5f64.to_radians() {
        return 3.0 * h;
    }
    h / (-p).tan()
}

/// Camera-to-world rotation for yaw about world z, pitch of the optical
/// axis above horizontal and roll about the optical axis. At zero angles the
/// camera looks along +x with image right = −y and image down = −z.
pub(crate) fn camera_rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let f = Vector3::new(pitch.cos(), 0.0, pitch.sin());
    let r = Vector3::new(0.0, -1.0, 0.0);
    let d = f.cross(&r);
    let (s, c) = roll.sin_cos();
    let r2 = r * c + d * s;
    let d2 = d * c - r * s;
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner();
    yaw * Matrix3::from_columns(&[r2, d2, f])
}

/// Pitch of a camera-to-world pose in degrees.
pub fn pitch_deg(camera_to_world: &PoseSE3) -> f64 {
    camera_to_world.rotation[(2, 2)].clamp(-1.0, 1.0).asin().to_degrees()
}

/// Camera-to-world poses of a smooth forward sweep along +x. Consecutive
/// camera centres are exactly `speed / frame_rate` apart.
pub fn generate_trajectory(spec: &TrajectorySpec, seed: u64) -> Result<Vec<PoseSE3>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let wl = spec.variation_wavelength;
    let h_mid = (spec.height_range[0] + spec.height_range[1]) / 2.0;
    let h_amp = (spec.height_range[1] - spec.height_range[0]) / 2.0;
    let p_mid = (spec.pitch_range_deg[0] + spec.pitch_range_deg[1]) / 2.0;
    let p_amp = (spec.pitch_range_deg[1] - spec.pitch_range_deg[0]) / 2.0;
    let height = |s: f64| h_mid + h_amp * (TAU * s / wl + phases[0]).sin();
    let heading = |s: f64| spec.yaw_amplitude_deg.to_radians() * (TAU * s / (1.7 * wl) + phases[1]).sin();

    let step = spec.step();
    let mut jitter = [0.0f64; 3];
    let mut poses = Vec::with_capacity(spec.frame_count);
    let mut centre = Vector3::new(0.0, 0.0, height(0.0));
    for k in 0..spec.frame_count {
        let s = k as f64 * step;
        if k > 0 {
            let dz = height(s) - centre.z;
            let run = (step * step - dz * dz).max(0.0).sqrt();
            let psi = heading(s - step / 2.0);
            centre += Vector3::new(run * psi.cos(), run * psi.sin(), dz);
        }
        for j in jitter.iter_mut() {
            let noise: f64 = if spec.jitter_deg > 0.0 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            };
            *j = 0.8 * *j + 0.2 * noise * spec.jitter_deg;
        }
        let pitch = (p_mid + p_amp * (TAU * s / wl + phases[2]).sin() + jitter[1])
            .clamp(spec.pitch_range_deg[0], spec.pitch_range_deg[1]);
        let roll = spec.roll_amplitude_deg * (TAU * s / (1.3 * wl) + phases[3]).sin() + jitter[2];
        let yaw = heading(s).to_degrees() + jitter[0];
        let rotation = camera_rotation(yaw.to_radians(), pitch.to_radians(), roll.to_radians());
        poses.push(PoseSE3 {
            rotation,
            translation: centre,
        });
    }
    for (k, w) in poses.windows(2).enumerate() {
        let angle = w[1].inverse().compose(&w[0]).rotation_angle().to_degrees();
        if angle >= MAX_FRAME_ROTATION_DEG {
            return Err(Error::Config(format!(
                "trajectory rotates {angle:.2}° between frames {k} and {}; reduce the variation",
                k + 1
            )));
        }
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_proper_and_looks_down() {
        let r = camera_rotation(0.3, -1.2, 0.1);
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let nadir = camera_rotation(0.0, -std::f64::consts::FRAC_PI_2, 0.0);
        assert!((nadir.column(2) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        // image up points along the direction of travel
        assert!((nadir.column(1) - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_speed_zero_jitter_is_static() {
        let spec = TrajectorySpec {
            speed: 0.0,
            jitter_deg: 0.0,
            frame_count: 20,
            ..Default::default()
        };
        let poses = generate_trajectory(&spec, 3).unwrap();
        assert!(poses.iter().all(|p| *p == poses[0]));
    }

    #[test]
    fn step_length_is_speed_over_rate() {
        let spec = TrajectorySpec::default();
        let poses = generate_trajectory(&spec, 4).unwrap();
        for w in poses.windows(2) {
            let d = (w[1].translation - w[0].translation).norm();
            assert!((d - 0.025).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn fixed_pitch() {
        let spec = TrajectorySpec {
            pitch_range_deg: [-20.0, -20.0],
            jitter_deg: 0.0,
            ..Default::default()
        };
        for p in generate_trajectory(&spec, 5).unwrap() {
            assert!((pitch_deg(&p) + 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bounded_rotation_and_deterministic() {
        let spec = TrajectorySpec::default();
        let a = generate_trajectory(&spec, 6).unwrap();
        assert_eq!(a, generate_trajectory(&spec, 6).unwrap());
        for p in &a {
            let pitch = pitch_deg(p);
            assert!((-80.0 - 1e-9..=-60.0 + 1e-9).contains(&pitch));
            assert!(p.translation.z > 0.0);
        }
    }

    #[test]
    fn zero_frames_is_an_error() {
        let spec = TrajectorySpec {
            frame_count: 0,
            ..Default::default()
        };
        assert!(generate_trajectory(&spec, 0).is_err());
    }
}
