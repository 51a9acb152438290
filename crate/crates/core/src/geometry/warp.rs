use rayon::prelude::*;

use super::camera::{CameraIntrinsics, MIN_DEPTH};
use super::image::{sample_frame_cell, BoolGrid, DepthMap, Frame, SampleCell};
use super::pose::PoseSE3;
use crate::{Error, Result};

/// Quads whose corner depths differ by more than this ratio straddle an
/// occlusion boundary and are not rasterized.
const DISCONTINUITY_RATIO: f64 = 1.1;

/// Synthesized view plus the mask of pixels that received a valid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    pub image: Frame,
    pub mask: BoolGrid,
}

pub(crate) fn check_shape(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::Shape { expected, found });
    }
    Ok(())
}

/// Inverse-warp view synthesis.
///
/// Every pixel `p` of the target view is lifted with the target depth,
/// moved into the source camera by `target_to_source`, projected, and the
/// source image is sampled bilinearly there. Pixels whose depth is invalid,
/// whose point lands behind the source camera, or whose sample falls outside
/// the source image are masked out (and set to black).
pub fn reproject_image(
    source: &Frame,
    target_depth: &DepthMap,
    target_to_source: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<Reprojection> {
    check_shape(k.dims(), source.dims())?;
    check_shape(k.dims(), target_depth.dims())?;
    let (w, h) = k.dims();
    let rows: Vec<(Vec<[f64; 3]>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px = vec![[0.0; 3]; w];
            let mut ok = vec![false; w];
            for x in 0..w {
                let Some(d) = target_depth.get(x, y) else { continue };
                let p = target_to_source.transform_point(&(k.ray(x as f64, y as f64) * d));
                if p.z < MIN_DEPTH {
                    continue;
                }
                let proj = k.project(&p);
                if let Some(cell) = SampleCell::locate(proj.u, proj.v, w, h) {
                    px[x] = sample_frame_cell(source, &cell);
                    ok[x] = true;
                }
            }
            (px, ok)
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (px, ok) in rows {
        pixels.extend(px);
        mask.extend(ok);
    }
    Ok(Reprojection {
        image: Frame {
            width: w,
            height: h,
            pixels,
            timestamp_index: source.timestamp_index,
        },
        mask: BoolGrid {
            width: w,
            height: h,
            data: mask,
        },
    })
}


/// Forward-warps a depth map into another camera.
///
/// The pixel grid of `depth` is treated as a triangle mesh; every vertex is
/// lifted, transformed by `source_to_target`, and the mesh is rasterized into
/// the target grid with perspective-correct depth interpolation and a
/// z-buffer. The output holds the z-component of the transformed surface;
/// target pixels not covered by any triangle are invalid.
pub fn warp_depth(depth: &DepthMap, source_to_target: &PoseSE3, k: &CameraIntrinsics) -> Result<DepthMap> {
    check_shape(k.dims(), depth.dims())?;
    let (w, h) = k.dims();
    // projected vertices: (u, v, z)
    let verts: Vec<Option<(f64, f64, f64)>> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let d = depth.get(x, y)?;
            let p = source_to_target.transform_point(&(k.ray(x as f64, y as f64) * d));
            if p.z < MIN_DEPTH {
                return None;
            }
            let proj = k.project(&p);
            Some((proj.u, proj.v, p.z))
        })
        .collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let ids = [y * w + x, y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1];
            let (Some(a), Some(b), Some(c), Some(d)) = (verts[ids[0]], verts[ids[1]], verts[ids[2]], verts[ids[3]])
            else {
                continue;
            };
            let src = ids.map(|i| depth.values[i]);
            let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = src.iter().cloned().fold(0.0, f64::max);
            if hi > lo * DISCONTINUITY_RATIO {
                continue;
            }
            rasterize(&mut zbuf, w, h, a, b, d);
            rasterize(&mut zbuf, w, h, a, d, c);
        }
    }
    let values = zbuf.iter().map(|&z| if z.is_finite() { z } else { 0.0 }).collect();
    DepthMap::from_values(w, h, values)
}

fn rasterize(zbuf: &mut [f64], w: usize, h: usize, a: (f64, f64, f64), b: (f64, f64, f64), c: (f64, f64, f64)) {
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if area.abs() < 1e-12 {
        return;
    }
    let min_u = a.0.min(b.0).min(c.0).ceil().max(0.0);
    let max_u = a.0.max(b.0).max(c.0).floor().min((w - 1) as f64);
    let min_v = a.1.min(b.1).min(c.1).ceil().max(0.0);
    let max_v = a.1.max(b.1).max(c.1).floor().min((h - 1) as f64);
    if min_u > max_u || min_v > max_v {
        return;
    }
    let tol = -1e-9;
    for v in min_v as usize..=max_v as usize {
        for u in min_u as usize..=max_u as usize {
            let (pu, pv) = (u as f64, v as f64);
            let la = ((b.0 - pu) * (c.1 - pv) - (b.1 - pv) * (c.0 - pu)) / area;
            let lb = ((c.0 - pu) * (a.1 - pv) - (c.1 - pv) * (a.0 - pu)) / area;
            let lc = 1.0 - la - lb;
            if la < tol || lb < tol || lc < tol {
                continue;
            }
            let inv_z = la / a.2 + lb / b.2 + lc / c.2;
            let z = 1.0 / inv_z;
            let slot = &mut zbuf[v * w + u];
            if z < *slot {
                *slot = z;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use crate::geometry::BilinearSample;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(20.0, 20.0, 12.0, 8.0, 24, 16).unwrap()
    }

    fn texture() -> Frame {
        Frame::from_fn(24, 16, |x, y| {
            let s = ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos() + 1.0) / 2.0;
            [s, 1.0 - s, (x + y) as f64 / 40.0]
        })
    }

    #[test]
    fn identity_warp_is_exact() {
        let k = cam();
        let img = texture();
        let d = DepthMap::from_fn(24, 16, |x, y| 1.0 + 0.05 * (x + y) as f64);
        let r = reproject_image(&img, &d, &PoseSE3::identity(), &k).unwrap();
        assert_eq!(r.mask.count(), 24 * 16);
        for (a, b) in r.image.pixels.iter().zip(&img.pixels) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn planar_translation_is_a_shift() {
        let k = cam();
        let img = texture();
        let depth = 4.0;
        let tx = 0.5;
        let d = DepthMap::constant(24, 16, depth);
        let r = reproject_image(&img, &d, &PoseSE3::from_translation(Vector3::new(tx, 0.0, 0.0)), &k).unwrap();
        let shift = k.fx * tx / depth; // 2.5 px
        for y in 0..16 {
            for x in 0..24 {
                let expected = img.bilinear_sample(x as f64 + shift, y as f64);
                let i = y * 24 + x;
                match expected {
                    Some(e) => {
                        assert!(r.mask.data[i]);
                        for c in 0..3 {
                            assert!((r.image.pixels[i][c] - e[c]).abs() < 1e-12);
                        }
                    }
                    None => assert!(!r.mask.data[i]),
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let k = cam();
        let d = DepthMap::constant(10, 10, 1.0);
        assert!(matches!(
            reproject_image(&texture(), &d, &PoseSE3::identity(), &k),
            Err(Error::Shape { .. })
        ));
        assert!(warp_depth(&d, &PoseSE3::identity(), &k).is_err());
    }

    #[test]
    fn warp_depth_identity() {
        let k = cam();
        let d = DepthMap::from_fn(24, 16, |x, y| 2.0 + 0.01 * x as f64 - 0.02 * y as f64);
        let out = warp_depth(&d, &PoseSE3::identity(), &k).unwrap();
        for i in 0..d.values.len() {
            assert!(out.valid[i]);
            assert!((out.values[i] - d.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn warp_depth_towards_plane() {
        let k = cam();
        let (d0, t) = (3.0, 0.5);
        let d = DepthMap::constant(24, 16, d0);
        let out = warp_depth(&d, &PoseSE3::from_translation(Vector3::new(0.0, 0.0, -t)), &k).unwrap();
        assert!(out.valid_count() > 0);
        for i in 0..out.values.len() {
            if out.valid[i] {
                assert!((out.values[i] - (d0 - t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn behind_camera_is_masked() {
        let k = cam();
        let d = DepthMap::constant(24, 16, 1.0);
        let r = reproject_image(&texture(), &d, &PoseSE3::from_translation(Vector3::new(0.0, 0.0, -2.0)), &k).unwrap();
        assert_eq!(r.mask.count(), 0);
    }
}
