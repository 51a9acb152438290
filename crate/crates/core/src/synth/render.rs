use nalgebra::Vector3;
use rayon::prelude::*;

use super::scene::SyntheticScene;
use crate::geometry::{CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::semantics::LabelMap;
use crate::{Error, Result};

const HIT_TOLERANCE: f64 = 1e-9;
const MIN_MARCH: f64 = 1e-4;
const BISECTIONS: usize = 48;

/// One rendered view. Pixels that miss the scene carry the water color,
/// the background class and invalid depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub frame: Frame,
    pub depth: DepthMap,
    pub labels: LabelMap,
}

/// Ray parameter interval inside the scene's bounding box.
fn clip_box(scene: &SyntheticScene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
    let lo = [scene.x0, scene.y0, scene.min_height];
    let hi = [scene.x_max(), scene.y_max(), scene.max_height];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Signed height of the ray point above the surface, clamping the lookup to
/// the scene so rounding at the box faces cannot drop a hit.
fn clearance(scene: &SyntheticScene, o: &Vector3<f64>, d: &Vector3<f64>, t: f64) -> f64 {
    let p = o + d * t;
    let x = p.x.clamp(scene.x0, scene.x_max());
    let y = p.y.clamp(scene.y0, scene.y_max());
    p.z - scene.height_at(x, y).unwrap_or(scene.min_height)
}

/// First intersection of the ray with the heightfield.
fn intersect(scene: &SyntheticScene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let (t_in, t_out) = clip_box(scene, o, d)?;
    // |d clearance / dt| is bounded by this along the ray.
    let lipschitz = d.z.abs() + scene.max_slope * d.xy().norm();
    let mut t = t_in;
    let mut f = clearance(scene, o, d, t);
    if f <= 0.0 {
        return Some(t);
    }
    loop {
        if f < HIT_TOLERANCE {
            return Some(t);
        }
        let next = t + (f / lipschitz).max(MIN_MARCH);
        if next > t_out {
            let g = clearance(scene, o, d, t_out);
            if g > 0.0 {
                return None;
            }
            return Some(bisect(scene, o, d, t, t_out));
        }
        let g = clearance(scene, o, d, next);
        if g <= 0.0 {
            return Some(bisect(scene, o, d, t, next));
        }
        t = next;
        f = g;
    }
}

fn bisect(scene: &SyntheticScene, o: &Vector3<f64>, d: &Vector3<f64>, mut above: f64, mut below: f64) -> f64 {
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (above + below);
        if clearance(scene, o, d, mid) > 0.0 {
            above = mid;
        } else {
            below = mid;
        }
    }
    0.5 * (above + below)
}

/// Ray-casts the scene from a camera-to-world pose. Depth is the camera z of
/// the first surface hit.
pub fn render_frame(scene: &SyntheticScene, camera_to_world: &PoseSE3, k: &CameraIntrinsics) -> Result<RenderedView> {
    if !camera_to_world.is_valid() {
        return Err(Error::Pose(format!("invalid camera pose {camera_to_world:?}")));
    }
    let o = camera_to_world.translation;
    if let Some(h) = scene.height_at(o.x, o.y) {
        if o.z <= h {
            return Err(Error::Pose(format!(
                "camera at height {:.4} is below the surface ({h:.4})",
                o.z
            )));
        }
    }
    let (w, h) = k.dims();
    let r = camera_to_world.rotation;
    let rows: Vec<Vec<([f64; 3], Option<f64>, u8)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let d = r * k.ray(x as f64, y as f64);
                    match intersect(scene, &o, &d) {
                        Some(t) if t > 0.0 => {
                            let p = o + d * t;
                            let (px, py) = (p.x.clamp(scene.x0, scene.x_max()), p.y.clamp(scene.y0, scene.y_max()));
                            let c = scene.color_at(px, py).unwrap_or(scene.water_color);
                            let label = scene.class_at(px, py).unwrap_or(scene.background_class);
                            (c.map(|v| v.clamp(0.0, 1.0)), Some(t), label)
                        }
                        _ => (scene.water_color, None, scene.background_class),
                    }
                })
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    let mut depth = DepthMap::empty(w, h);
    let mut labels = Vec::with_capacity(w * h);
    for (i, (c, t, l)) in rows.into_iter().flatten().enumerate() {
        pixels.push(c);
        if let Some(t) = t {
            depth.set(i, t);
        }
        labels.push(l);
    }
    Ok(RenderedView {
        frame: Frame::new(w, h, pixels, 0)?,
        depth,
        labels: LabelMap::new(w, h, labels)?,
    })
}

/// Renders every pose; frame `i` gets timestamp index `i`.
pub fn render_sequence(
    scene: &SyntheticScene,
    camera_to_world: &[PoseSE3],
    k: &CameraIntrinsics,
) -> Result<Vec<RenderedView>> {
    camera_to_world
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut view = render_frame(scene, pose, k)?;
            view.frame.timestamp_index = i;
            Ok(view)
        })
        .collect()
}
