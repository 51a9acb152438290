use nalgebra::{Matrix3, Vector3};

use super::{photometric, smoothness, AdjointFaults, GeometricConsistency, LossBreakdown, LossWeights, DIVISION_EPS};
use crate::geometry::image::{frame_corners, sample_frame_cell};
use crate::geometry::{check_dims, CameraIntrinsics, DepthMap, Frame, PoseSE3, SampleCell, MIN_DEPTH};
use crate::{Error, Result};

pub(crate) struct PairInputs<'a> {
    pub image_a: &'a Frame,
    pub image_b: &'a Frame,
    pub depth_a: &'a DepthMap,
    pub depth_b: &'a DepthMap,
    pub pose_ab: &'a PoseSE3,
    pub k: &'a CameraIntrinsics,
    pub weights: &'a LossWeights,
    pub faults: AdjointFaults,
}

/// The discrete choices made while evaluating a pair: bilinear cells,
/// validity, and the signs of every absolute value. Re-evaluating with a
/// recorded set keeps the objective on one smooth piece, which is what a
/// finite-difference check needs near a seam.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Branches {
    pub(crate) cells_ab: Vec<Option<(usize, usize)>>,
    pub(crate) cells_ba: Vec<Option<(usize, usize)>>,
    pub(crate) signs_ab: Vec<[i8; 3]>,
    pub(crate) signs_ba: Vec<[i8; 3]>,
    pub(crate) smooth_a: (Vec<i8>, Vec<i8>),
    pub(crate) smooth_b: (Vec<i8>, Vec<i8>),
    pub(crate) geo_cells: Vec<Option<(usize, usize)>>,
    pub(crate) geo_signs: Vec<i8>,
}

/// Gradient of the pair total w.r.t. both depth maps and the raw entries of
/// `T_ab` (rotation treated as an unconstrained matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub depth_a: Vec<f64>,
    pub depth_b: Vec<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PairGradient {
    fn zeros(n: usize) -> Self {
        PairGradient {
            depth_a: vec![0.0; n],
            depth_b: vec![0.0; n],
            rotation: Matrix3::zeros(),
            translation: Vector3::zeros(),
        }
    }
}

pub(crate) struct PairEval {
    pub breakdown: LossBreakdown,
    pub branches: Branches,
    pub grad: Option<PairGradient>,
}

struct WarpPoint {
    /// Point in the target camera.
    x: Vector3<f64>,
    /// Same point in the source camera.
    q: Vector3<f64>,
    cell: SampleCell,
}

struct Warped {
    synth: Vec<[f64; 3]>,
    mask: Vec<bool>,
    cells: Vec<Option<(usize, usize)>>,
    points: Vec<Option<WarpPoint>>,
}

fn lift(k: &CameraIntrinsics, i: usize, depth: f64) -> Vector3<f64> {
    k.ray((i % k.width) as f64, (i / k.width) as f64) * depth
}

/// Locates (or re-uses) the sampling cell for a transformed point.
fn cell_for(
    q: &Vector3<f64>,
    k: &CameraIntrinsics,
    frozen: Option<Option<(usize, usize)>>,
) -> Option<SampleCell> {
    let (w, h) = k.dims();
    match frozen {
        Some(None) => None,
        Some(Some((x0, y0))) => {
            let p = k.project(q);
            Some(SampleCell::frozen(x0, y0, p.u, p.v, w, h))
        }
        None => {
            if q.z < MIN_DEPTH {
                return None;
            }
            let p = k.project(q);
            SampleCell::locate(p.u, p.v, w, h)
        }
    }
}

fn warp(
    source: &Frame,
    target_depth: &DepthMap,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &CameraIntrinsics,
    frozen: Option<&[Option<(usize, usize)>]>,
) -> Warped {
    let n = k.width * k.height;
    let mut out = Warped {
        synth: vec![[0.0; 3]; n],
        mask: vec![false; n],
        cells: vec![None; n],
        points: Vec::with_capacity(n),
    };
    for i in 0..n {
        if !target_depth.valid[i] {
            out.points.push(None);
            continue;
        }
        let x = lift(k, i, target_depth.values[i]);
        let q = r * x + t;
        let Some(cell) = cell_for(&q, k, frozen.map(|f| f[i])) else {
            out.points.push(None);
            continue;
        };
        out.synth[i] = sample_frame_cell(source, &cell);
        out.mask[i] = true;
        out.cells[i] = Some((cell.x0, cell.y0));
        out.points.push(Some(WarpPoint { x, q, cell }));
    }
    out
}

/// Pulls `d loss / d Q` back through the rigid motion `Q = R X + t` with
/// `X = ray · D`.
fn rigid_adjoint(
    g_q: &Vector3<f64>,
    point: &WarpPoint,
    r: &Matrix3<f64>,
    depth: f64,
    g_r: &mut Matrix3<f64>,
    g_t: &mut Vector3<f64>,
) -> f64 {
    *g_r += g_q * point.x.transpose();
    *g_t += g_q;
    (r.transpose() * g_q).dot(&point.x) / depth
}

/// `d loss / d Q` from `d loss / d (u, v)` and a direct `d loss / d Q.z`.
fn projection_adjoint(g_u: f64, g_v: f64, g_z: f64, q: &Vector3<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    let iz = 1.0 / q.z;
    Vector3::new(
        g_u * k.fx * iz,
        g_v * k.fy * iz,
        g_z - (g_u * k.fx * q.x + g_v * k.fy * q.y) * iz * iz,
    )
}

#[allow(clippy::too_many_arguments)]
fn warp_adjoint(
    g_synth: &[[f64; 3]],
    scale: f64,
    warped: &Warped,
    source: &Frame,
    target_depth: &DepthMap,
    r: &Matrix3<f64>,
    k: &CameraIntrinsics,
    g_depth: &mut [f64],
    g_r: &mut Matrix3<f64>,
    g_t: &mut Vector3<f64>,
) {
    for (i, point) in warped.points.iter().enumerate() {
        let Some(point) = point else { continue };
        let corners = frame_corners(source, &point.cell);
        let (mut g_u, mut g_v) = (0.0, 0.0);
        for c in 0..3 {
            let g = g_synth[i][c] * scale;
            if g == 0.0 {
                continue;
            }
            let (du, dv) = point.cell.gradient([corners[0][c], corners[1][c], corners[2][c], corners[3][c]]);
            g_u += g * du;
            g_v += g * dv;
        }
        let g_q = projection_adjoint(g_u, g_v, 0.0, &point.q, k);
        g_depth[i] += rigid_adjoint(&g_q, point, r, target_depth.values[i], g_r, g_t);
    }
}

struct GeoEval {
    value: f64,
    map: Vec<f64>,
    valid: Vec<bool>,
    cells: Vec<Option<(usize, usize)>>,
    signs: Vec<i8>,
}

#[allow(clippy::too_many_arguments)]
fn geometric(
    depth_a: &DepthMap,
    depth_b: &DepthMap,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &CameraIntrinsics,
    frozen: Option<(&[Option<(usize, usize)>], &[i8])>,
    grad: Option<(f64, &mut PairGradient)>,
    faults: AdjointFaults,
) -> Result<GeoEval> {
    let n = k.width * k.height;
    let mut map = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut cells = vec![None; n];
    let mut signs = vec![0i8; n];
    // (pixel, point, sampled depth of b, corner values of b)
    let mut used = Vec::new();
    for i in 0..n {
        if !depth_a.valid[i] {
            continue;
        }
        let x = lift(k, i, depth_a.values[i]);
        let q = r * x + t;
        let Some(cell) = cell_for(&q, k, frozen.map(|f| f.0[i])) else {
            continue;
        };
        let idx = cell.indices(k.width);
        let weights = cell.weights();
        if frozen.is_none() && (0..4).any(|j| weights[j] != 0.0 && !depth_b.valid[idx[j]]) {
            continue;
        }
        let corners = idx.map(|j| if depth_b.valid[j] { depth_b.values[j] } else { 0.0 });
        let sampled = cell.interpolate(corners);
        let z = q.z;
        let diff = z - sampled;
        let s = match frozen {
            Some(f) => f.1[i],
            None => {
                if diff > 0.0 {
                    1
                } else if diff < 0.0 {
                    -1
                } else {
                    0
                }
            }
        };
        map[i] = s as f64 * diff / (z + sampled + DIVISION_EPS);
        valid[i] = true;
        cells[i] = Some((cell.x0, cell.y0));
        signs[i] = s;
        used.push((i, WarpPoint { x, q, cell }, sampled, corners));
    }
    if used.is_empty() {
        return Err(Error::Degenerate("no valid overlap for geometric consistency".into()));
    }
    let inv = 1.0 / used.len() as f64;
    let value = used.iter().map(|(i, ..)| map[*i]).sum::<f64>() * inv;

    if let Some((scale, g)) = grad {
        let mut g_r = Matrix3::zeros();
        let mut g_t = Vector3::zeros();
        for (i, point, sampled, corners) in &used {
            let z = point.q.z;
            let s = signs[*i] as f64;
            let den = z + sampled + DIVISION_EPS;
            let mut c = scale * inv * s / (den * den);
            if faults.flip_geometric {
                c = -c;
            }
            let g_z = c * (2.0 * sampled + DIVISION_EPS);
            let g_s = -c * (2.0 * z + DIVISION_EPS);
            let w = point.cell.weights();
            for (j, idx) in point.cell.indices(k.width).into_iter().enumerate() {
                if depth_b.valid[idx] {
                    g.depth_b[idx] += g_s * w[j];
                }
            }
            let (du, dv) = point.cell.gradient(*corners);
            let g_q = projection_adjoint(g_s * du, g_s * dv, g_z, &point.q, k);
            g.depth_a[*i] += rigid_adjoint(&g_q, point, r, depth_a.values[*i], &mut g_r, &mut g_t);
        }
        g.rotation += g_r;
        g.translation += g_t;
    }
    Ok(GeoEval {
        value,
        map,
        valid,
        cells,
        signs,
    })
}

pub(crate) fn geometric_only(
    depth_a: &DepthMap,
    depth_b: &DepthMap,
    pose_ab: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<GeometricConsistency> {
    check_dims(k.dims(), depth_a.dims())?;
    check_dims(k.dims(), depth_b.dims())?;
    let e = geometric(
        depth_a,
        depth_b,
        &pose_ab.rotation,
        &pose_ab.translation,
        k,
        None,
        None,
        AdjointFaults::default(),
    )?;
    Ok(GeometricConsistency {
        value: e.value,
        map: e.map,
        valid: e.valid,
    })
}

fn finite(value: f64, term: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term })
    }
}

/// Evaluates the symmetric pair objective and, on request, its gradient.
pub(crate) fn evaluate(inp: &PairInputs<'_>, frozen: Option<&Branches>, want_grad: bool) -> Result<PairEval> {
    let k = inp.k;
    for dims in [
        inp.image_a.dims(),
        inp.image_b.dims(),
        inp.depth_a.dims(),
        inp.depth_b.dims(),
    ] {
        check_dims(k.dims(), dims)?;
    }
    let (w, h) = k.dims();
    let wts = inp.weights;
    let r_ab = inp.pose_ab.rotation;
    let t_ab = inp.pose_ab.translation;
    let ba = inp.pose_ab.inverse();
    let (r_ba, t_ba) = (ba.rotation, ba.translation);

    let warp_ab = warp(inp.image_b, inp.depth_a, &r_ab, &t_ab, k, frozen.map(|f| f.cells_ab.as_slice()));
    let warp_ba = warp(inp.image_a, inp.depth_b, &r_ba, &t_ba, k, frozen.map(|f| f.cells_ba.as_slice()));
    let photo_ab = photometric::evaluate(
        &inp.image_a.pixels,
        &warp_ab.synth,
        &warp_ab.mask,
        w,
        h,
        wts.alpha,
        frozen.map(|f| f.signs_ab.as_slice()),
        want_grad,
        inp.faults,
    )?;
    let photo_ba = photometric::evaluate(
        &inp.image_b.pixels,
        &warp_ba.synth,
        &warp_ba.mask,
        w,
        h,
        wts.alpha,
        frozen.map(|f| f.signs_ba.as_slice()),
        want_grad,
        inp.faults,
    )?;
    fn smooth_frozen(s: &(Vec<i8>, Vec<i8>)) -> (&[i8], &[i8]) {
        (s.0.as_slice(), s.1.as_slice())
    }
    let smooth_a = smoothness::evaluate(
        inp.image_a,
        inp.depth_a,
        frozen.map(|f| smooth_frozen(&f.smooth_a)),
        want_grad,
        inp.faults,
    )?;
    let smooth_b = smoothness::evaluate(
        inp.image_b,
        inp.depth_b,
        frozen.map(|f| smooth_frozen(&f.smooth_b)),
        want_grad,
        inp.faults,
    )?;

    let mut grad = want_grad.then(|| PairGradient::zeros(w * h));
    let geo = geometric(
        inp.depth_a,
        inp.depth_b,
        &r_ab,
        &t_ab,
        k,
        frozen.map(|f| (f.geo_cells.as_slice(), f.geo_signs.as_slice())),
        grad.as_mut().map(|g| (wts.geometric, g)),
        inp.faults,
    )?;

    let breakdown = LossBreakdown {
        photometric_ab: finite(photo_ab.value, "photometric")?,
        photometric_ba: finite(photo_ba.value, "photometric")?,
        smooth_a: finite(smooth_a.value, "smoothness")?,
        smooth_b: finite(smooth_b.value, "smoothness")?,
        geometric: finite(geo.value, "geometric")?,
        total: 0.0,
        valid_pixel_count: warp_ab.mask.iter().chain(&warp_ba.mask).filter(|m| **m).count(),
    }
    .with_total(wts);

    if let Some(g) = grad.as_mut() {
        let mut g_r_ba = Matrix3::zeros();
        let mut g_t_ba = Vector3::zeros();
        warp_adjoint(
            photo_ab.grad.as_ref().expect("requested"),
            wts.photometric,
            &warp_ab,
            inp.image_b,
            inp.depth_a,
            &r_ab,
            k,
            &mut g.depth_a,
            &mut g.rotation,
            &mut g.translation,
        );
        warp_adjoint(
            photo_ba.grad.as_ref().expect("requested"),
            wts.photometric,
            &warp_ba,
            inp.image_a,
            inp.depth_b,
            &r_ba,
            k,
            &mut g.depth_b,
            &mut g_r_ba,
            &mut g_t_ba,
        );
        // R_ba = Rᵀ, t_ba = −Rᵀ t
        g.rotation += g_r_ba.transpose() - t_ab * g_t_ba.transpose();
        g.translation -= r_ab * g_t_ba;
        for (dst, src) in [(&mut g.depth_a, &smooth_a), (&mut g.depth_b, &smooth_b)] {
            for (d, s) in dst.iter_mut().zip(src.grad.as_ref().expect("requested")) {
                *d += wts.smoothness * s;
            }
        }
        if inp.faults.flip_rotation {
            g.rotation = -g.rotation;
        }
        let all = g
            .depth_a
            .iter()
            .chain(&g.depth_b)
            .chain(g.rotation.iter())
            .chain(g.translation.iter());
        for v in all {
            finite(*v, "gradient")?;
        }
    }

    Ok(PairEval {
        breakdown,
        branches: Branches {
            cells_ab: warp_ab.cells,
            cells_ba: warp_ba.cells,
            signs_ab: photo_ab.signs,
            signs_ba: photo_ba.signs,
            smooth_a: (smooth_a.signs_x, smooth_a.signs_y),
            smooth_b: (smooth_b.signs_x, smooth_b.signs_y),
            geo_cells: geo.cells,
            geo_signs: geo.signs,
        },
        grad,
    })
}
