//! Invariant suites runnable from the command line.
//!
//! Each suite compares an implementation against an independent oracle and
//! reports the measured discrepancy next to its tolerance. Failures are
//! report entries, not errors.

pub mod gradient;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimation::{pixel_uncertainty_filter, UncertaintyMap};
use crate::fusion::{point_uncertainty_filter, CloudPoint, SemanticPointCloud};
use crate::geometry::{reproject_image, CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::objective::{AdjointFaults, LossWeights};
use crate::ortho::{enclosed_hole_fraction, ortho_project};
use gradient::{check_gradient, GradientInstance, FD_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradient,
    Geometry,
    Filters,
    Ortho,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradient, Suite::Geometry, Suite::Filters, Suite::Ortho];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::Geometry => "geometry",
            Suite::Filters => "filters",
            Suite::Ortho => "ortho",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Seconds per suite.
    pub seconds: BTreeMap<String, f64>,
}

impl VerifyReport {
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub suites: Vec<Suite>,
    pub seed: u64,
    pub gradient_instances: usize,
    /// Deliberate adjoint defects; a correct suite must flag them.
    pub faults: AdjointFaults,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            suites: Suite::ALL.to_vec(),
            seed: 0,
            gradient_instances: 100,
            faults: AdjointFaults::default(),
        }
    }
}

/// `measured <= tolerance`.
fn check(suite: Suite, name: &str, measured: f64, tolerance: f64, detail: String) -> Check {
    Check {
        suite,
        name: name.into(),
        passed: measured <= tolerance,
        measured,
        tolerance,
        detail,
    }
}

/// Counts mismatches against the oracle; passes only at zero.
fn exact(suite: Suite, name: &str, mismatches: usize, cases: usize) -> Check {
    check(suite, name, mismatches as f64, 0.0, format!("{mismatches} mismatches in {cases} cases"))
}

fn failed(suite: Suite, name: &str, e: impl std::fmt::Display) -> Check {
    Check {
        suite,
        name: name.into(),
        passed: false,
        measured: f64::NAN,
        tolerance: 0.0,
        detail: format!("error: {e}"),
    }
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut suites = opts.suites.clone();
    suites.sort();
    suites.dedup();
    for suite in suites {
        let start = Instant::now();
        let checks = match suite {
            Suite::Gradient => gradient_suite(opts),
            Suite::Geometry => geometry_suite(opts.seed),
            Suite::Filters => filter_suite(opts.seed),
            Suite::Ortho => ortho_suite(opts.seed),
        };
        report.seconds.insert(suite.name().into(), start.elapsed().as_secs_f64());
        report.checks.extend(checks);
    }
    report.passed = report.checks.iter().all(|c| c.passed);
    report
}

fn gradient_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut worst: f64 = 0.0;
    let mut straddled = 0;
    let mut params = (usize::MAX, 0);
    for i in 0..opts.gradient_instances {
        let inst = GradientInstance::random(opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let problem = inst.problem(LossWeights::default(), opts.faults);
        match check_gradient(&problem, &inst.theta, FD_STEP) {
            Ok(c) => {
                worst = worst.max(c.max_relative_error);
                straddled += c.straddled;
                params = (params.0.min(c.parameters), params.1.max(c.parameters));
            }
            Err(e) => return vec![failed(Suite::Gradient, "gradient_max_relative_error", e)],
        }
    }
    vec![check(
        Suite::Gradient,
        "gradient_max_relative_error",
        worst,
        1e-4,
        format!(
            "{} instances, {}..={} parameters, {straddled} stencils re-evaluated on the centre branch",
            opts.gradient_instances, params.0, params.1
        ),
    )]
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
    let w = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
    let t = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    PoseSE3::from_axis_angle(&w, t)
}

fn pose_distance(a: &PoseSE3, b: &PoseSE3) -> f64 {
    (a.rotation - b.rotation).abs().max().max((a.translation - b.translation).abs().max())
}

fn geometry_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e0);
    let s = Suite::Geometry;
    let mut out = Vec::new();

    // identity warp on random textures and depths
    let mut warp_err: f64 = 0.0;
    let mut masked = 0;
    for _ in 0..20 {
        let w = rng.random_range(4..40);
        let h = rng.random_range(4..40);
        let k = CameraIntrinsics::from_fov(w, h, rng.random_range(40.0..90.0)).expect("valid fov");
        let img = Frame::from_fn(w, h, |_, _| [0.0; 3]);
        let pixels = (0..w * h).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
        let img = Frame { pixels, ..img };
        let values = (0..w * h).map(|_| rng.random_range(0.2..20.0)).collect();
        let d = DepthMap::from_values(w, h, values).expect("positive depths");
        match reproject_image(&img, &d, &PoseSE3::identity(), &k) {
            Ok(r) => {
                masked += w * h - r.mask.count();
                for (a, b) in r.image.pixels.iter().zip(&img.pixels) {
                    for c in 0..3 {
                        warp_err = warp_err.max((a[c] - b[c]).abs());
                    }
                }
            }
            Err(e) => return vec![failed(s, "identity_warp", e)],
        }
    }
    let mut c = check(s, "identity_warp", warp_err, 1e-12, format!("20 images, {masked} pixels masked"));
    c.passed &= masked == 0;
    out.push(c);

    let (mut assoc, mut inv, mut ident, mut act, mut exp_log): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let id = PoseSE3::identity();
    for _ in 0..1000 {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        assoc = assoc.max(pose_distance(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        inv = inv
            .max(pose_distance(&a.compose(&a.inverse()), &id))
            .max(pose_distance(&a.inverse().compose(&a), &id));
        ident = ident.max(pose_distance(&a.compose(&id), &a)).max(pose_distance(&id.compose(&a), &a));
        let p = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        act = act.max((a.compose(&b).transform_point(&p) - a.transform_point(&b.transform_point(&p))).abs().max());
        let back = PoseSE3::from_axis_angle(&a.axis_angle(), a.translation);
        exp_log = exp_log.max(pose_distance(&back, &a));
    }
    out.push(check(s, "se3_associativity", assoc, 1e-9, "1000 random triples".into()));
    out.push(check(s, "se3_inverse", inv, 1e-9, "1000 random poses".into()));
    out.push(check(s, "se3_identity", ident, 1e-9, "1000 random poses".into()));
    out.push(check(s, "se3_action_homomorphism", act, 1e-9, "1000 random pairs".into()));
    out.push(check(s, "so3_exp_log_round_trip", exp_log, 1e-9, "rotation angles below 2.6 rad".into()));

    let mut proj: f64 = 0.0;
    for _ in 0..200 {
        let w = rng.random_range(8..400);
        let h = rng.random_range(8..400);
        let k = CameraIntrinsics::from_fov(w, h, rng.random_range(30.0..120.0)).expect("valid fov");
        for _ in 0..20 {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            let depth = rng.random_range(0.01..100.0);
            match k.backproject((x, y), depth) {
                Ok(p) => {
                    let q = k.project(&p);
                    proj = proj.max((q.u - x as f64).abs()).max((q.v - y as f64).abs());
                }
                Err(e) => return [out, vec![failed(s, "projection_round_trip_px", e)]].concat(),
            }
        }
    }
    out.push(check(s, "projection_round_trip_px", proj, 1e-9, "4000 pixels over 200 cameras".into()));
    out
}

/// `⌈num/den · n⌉` in integers.
fn ceil_share(num: usize, den: usize, n: usize) -> usize {
    (num * n).div_ceil(den)
}

/// Every dropped key must be ≥ every kept key.
fn ordered(keys: &[f64], dropped: &[bool]) -> bool {
    let lo = keys.iter().zip(dropped).filter(|(_, d)| **d).map(|(k, _)| *k).fold(f64::INFINITY, f64::min);
    let hi = keys.iter().zip(dropped).filter(|(_, d)| !**d).map(|(k, _)| *k).fold(f64::NEG_INFINITY, f64::max);
    lo >= hi
}

fn filter_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf17);
    let s = Suite::Filters;
    let (mut pixel_bad, mut point_bad) = (0, 0);
    let cases = 400;
    for case in 0..cases {
        let tied = case % 2 == 1;
        let (w, h) = (rng.random_range(1..30), rng.random_range(1..30));
        let n = w * h;
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let mut depth = DepthMap::from_values(w, h, values).expect("positive");
        for i in 0..n {
            if rng.random_bool(0.1) {
                depth.invalidate(i);
            }
        }
        let draw = |rng: &mut ChaCha8Rng| if tied { rng.random_range(0..3) as f64 } else { rng.random_range(0.0..1.0) };
        let variance: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let sample_count: Vec<usize> = (0..n).map(|_| if rng.random_bool(0.05) { 1 } else { 3 }).collect();
        let keys: Vec<f64> = (0..n).map(|i| if sample_count[i] >= 2 { variance[i] } else { f64::INFINITY }).collect();
        let u = UncertaintyMap {
            width: w,
            height: h,
            variance,
            sample_count,
        };
        match pixel_uncertainty_filter(&depth, &u, 0.35) {
            Ok(keep) => {
                let valid: Vec<usize> = (0..n).filter(|&i| depth.valid[i]).collect();
                let removed = valid.iter().filter(|&&i| !keep.data[i]).count();
                let vk: Vec<f64> = valid.iter().map(|&i| keys[i]).collect();
                let vd: Vec<bool> = valid.iter().map(|&i| !keep.data[i]).collect();
                let invalid_kept = (0..n).any(|i| !depth.valid[i] && keep.data[i]);
                if removed != ceil_share(35, 100, valid.len()) || !ordered(&vk, &vd) || invalid_kept {
                    pixel_bad += 1;
                }
            }
            Err(_) => pixel_bad += 1,
        }

        let m = rng.random_range(0..500);
        let cloud = SemanticPointCloud {
            points: (0..m)
                .map(|i| CloudPoint {
                    position: [i as f64, 0.0, 0.0],
                    color: [0; 3],
                    class_id: 0,
                    uncertainty: if rng.random_bool(0.03) { f64::NAN } else { draw(&mut rng) },
                })
                .collect(),
        };
        match point_uncertainty_filter(&cloud, 0.20) {
            Ok(kept) => {
                let mut dropped = vec![true; m];
                for p in &kept.points {
                    dropped[p.position[0] as usize] = false;
                }
                let keys: Vec<f64> = cloud
                    .points
                    .iter()
                    .map(|p| if p.uncertainty.is_nan() { f64::INFINITY } else { p.uncertainty })
                    .collect();
                if m - kept.len() != ceil_share(20, 100, m) || !ordered(&keys, &dropped) {
                    point_bad += 1;
                }
            }
            Err(_) => point_bad += 1,
        }
    }
    vec![
        exact(s, "pixel_filter_removes_35_percent", pixel_bad, cases),
        exact(s, "point_filter_removes_20_percent", point_bad, cases),
    ]
}

/// Union-find over empty cells plus one node for the outside.
fn holes_by_union_find(occ: &[bool], w: usize, h: usize) -> f64 {
    let outside = w * h;
    let mut parent: Vec<usize> = (0..=outside).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let union = |p: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(p, a), find(p, b));
        p[ra] = rb;
    };
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            if occ[k] {
                continue;
            }
            if i == 0 || j == 0 || i == w - 1 || j == h - 1 {
                union(&mut parent, k, outside);
            }
            if i + 1 < w && !occ[k + 1] {
                union(&mut parent, k, k + 1);
            }
            if j + 1 < h && !occ[k + w] {
                union(&mut parent, k, k + w);
            }
        }
    }
    let root = find(&mut parent, outside);
    let holes = (0..w * h).filter(|&k| !occ[k] && find(&mut parent, k) != root).count();
    let filled = occ.iter().filter(|o| **o).count();
    holes as f64 / (holes + filled) as f64
}

fn ortho_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0c7);
    let s = Suite::Ortho;
    let mut out = Vec::new();

    // one cloud with 1000 occupied cells on a 40 × 25 raster
    let (w, h, cell) = (40usize, 25usize, 0.05);
    let mut points = Vec::new();
    let mut per_cell: Vec<Vec<(f64, u8)>> = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let n = rng.random_range(1..25);
            let tied = rng.random_bool(0.3);
            let classes = rng.random_range(1..5u8);
            let mut here = Vec::new();
            for _ in 0..n {
                let z = if tied { rng.random_range(0..3) as f64 * 0.01 } else { rng.random_range(-0.2..0.2) };
                let c = rng.random_range(0..classes);
                let x = (i as f64 + rng.random_range(0.05..0.95)) * cell;
                let y = (j as f64 + rng.random_range(0.05..0.95)) * cell;
                points.push(CloudPoint {
                    position: [x, y, z],
                    color: [0; 3],
                    class_id: c,
                    uncertainty: 0.0,
                });
                here.push((z, c));
            }
            per_cell.push(here);
        }
    }
    // points are emitted cell by cell, so within a cell the cloud order is
    // the order of `per_cell`
    let cloud = SemanticPointCloud { points };
    match ortho_project(&cloud, [0.0, 0.0, -1.0], cell) {
        Ok(grid) if grid.width == w && grid.height == h => {
            let mut bad = 0;
            for (idx, pts) in per_cell.iter().enumerate() {
                let n = pts.len();
                let take = ceil_share(3, 10, n).max(1);
                let mut votes = [0usize; 256];
                let mut zsum = 0.0;
                for (a, &(za, ca)) in pts.iter().enumerate() {
                    let above = pts.iter().enumerate().filter(|&(b, &(zb, _))| zb > za || (zb == za && b < a)).count();
                    if above < take {
                        votes[ca as usize] += 1;
                        zsum += za;
                    }
                }
                let best = (0..256).fold(0, |best, c| if votes[c] > votes[best] { c } else { best });
                let ok = grid.cells[idx].is_some_and(|c| {
                    c.class_id as usize == best && c.point_count == n && (c.z - zsum / take as f64).abs() < 1e-12
                });
                bad += !ok as usize;
            }
            out.push(exact(s, "top_fraction_majority_rule", bad, per_cell.len()));
        }
        Ok(grid) => out.push(failed(
            s,
            "top_fraction_majority_rule",
            format!("expected a {w}x{h} raster, got {}x{}", grid.width, grid.height),
        )),
        Err(e) => out.push(failed(s, "top_fraction_majority_rule", e)),
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (gw, gh) = (rng.random_range(1..40), rng.random_range(1..40));
        let p = rng.random_range(0.3..0.9);
        let mut occ: Vec<bool> = (0..gw * gh).map(|_| rng.random_bool(p)).collect();
        occ[rng.random_range(0..gw * gh)] = true;
        match enclosed_hole_fraction(&occ, gw, gh) {
            Ok(f) => worst = worst.max((f - holes_by_union_find(&occ, gw, gh)).abs()),
            Err(e) => return [out, vec![failed(s, "hole_fraction_vs_union_find", e)]].concat(),
        }
    }
    out.push(check(s, "hole_fraction_vs_union_find", worst, 0.0, "100 random occupancy grids".into()));
    out
}
