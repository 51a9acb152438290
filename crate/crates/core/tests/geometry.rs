use nalgebra::Vector3;
use proptest::prelude::*;
use reefsfm::geometry::{
    reproject_image, rotation_from_axis_angle, rotation_to_axis_angle, warp_depth, CameraIntrinsics, DepthMap, Frame,
    PoseSE3,
};
use reefsfm::Error;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn pose() -> impl Strategy<Value = PoseSE3> {
    (vec3(1.5), vec3(3.0)).prop_map(|(w, t)| PoseSE3::from_axis_angle(&w, t))
}

fn close(a: &PoseSE3, b: &PoseSE3, tol: f64) -> bool {
    (a.rotation - b.rotation).abs().max() < tol && (a.translation - b.translation).abs().max() < tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
    }

    #[test]
    fn inverse_cancels(a in pose()) {
        prop_assert!(close(&a.compose(&a.inverse()), &PoseSE3::identity(), 1e-9));
        prop_assert!(close(&a.inverse().compose(&a), &PoseSE3::identity(), 1e-9));
    }

    #[test]
    fn action_is_a_homomorphism(a in pose(), b in pose(), p in vec3(5.0)) {
        let lhs = a.compose(&b).transform_point(&p);
        let rhs = a.transform_point(&b.transform_point(&p));
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn composed_poses_stay_orthonormal(a in pose(), b in pose()) {
        let c = a.compose(&b);
        prop_assert!(c.orthonormality_error() < 1e-12);
        prop_assert!((c.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip(w in vec3(1.5)) {
        prop_assume!(w.norm() < 2.6);
        let back = rotation_to_axis_angle(&rotation_from_axis_angle(&w));
        prop_assert!((back - w).norm() < 1e-9);
    }

    #[test]
    fn projection_round_trip(
        w in 2usize..200,
        h in 2usize..200,
        fov in 20.0f64..120.0,
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
        depth in 0.01f64..100.0,
    ) {
        let k = CameraIntrinsics::from_fov(w, h, fov).unwrap();
        let px = ((fx * w as f64) as usize).min(w - 1);
        let py = ((fy * h as f64) as usize).min(h - 1);
        let p = k.backproject((px, py), depth).unwrap();
        prop_assert!((p.z - depth).abs() < 1e-12 * depth.max(1.0));
        let proj = k.project(&p);
        prop_assert!(proj.in_front);
        prop_assert!((proj.u - px as f64).abs() < 1e-9 && (proj.v - py as f64).abs() < 1e-9);
    }
}

#[test]
fn backprojection_rejects_bad_depth() {
    let k = CameraIntrinsics::from_fov(8, 6, 60.0).unwrap();
    for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(k.backproject((1, 1), d), Err(Error::InvalidDepth(_))));
    }
}

#[test]
fn points_behind_the_camera_are_not_in_front() {
    let k = CameraIntrinsics::from_fov(8, 6, 60.0).unwrap();
    assert!(!k.project(&Vector3::new(0.1, 0.2, -1.0)).in_front);
}

#[test]
fn identity_warp_reproduces_the_image() {
    let k = CameraIntrinsics::from_fov(23, 17, 70.0).unwrap();
    let img = Frame::from_fn(23, 17, |x, y| [x as f64 / 23.0, y as f64 / 17.0, ((x * 7 + y * 3) % 11) as f64 / 11.0]);
    let depth = DepthMap::from_fn(23, 17, |x, y| 1.0 + 0.1 * x as f64 + 0.05 * y as f64);
    let r = reproject_image(&img, &depth, &PoseSE3::identity(), &k).unwrap();
    assert_eq!(r.mask.count(), 23 * 17);
    for (a, b) in r.image.pixels.iter().zip(&img.pixels) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn sideways_translation_over_a_plane_shifts_pixels() {
    // a fronto-parallel plane at depth 2 seen after moving 0.1 along x:
    // every sample lands fx·0.1/2 pixels to the left in the source
    let (w, h) = (40, 20);
    let k = CameraIntrinsics::new(20.0, 20.0, 19.5, 9.5, w, h).unwrap();
    let img = Frame::from_fn(w, h, |x, y| [x as f64 * 0.01, y as f64 * 0.02, 0.5]);
    let depth = DepthMap::constant(w, h, 2.0);
    let target_to_source = PoseSE3::from_translation(Vector3::new(-0.1, 0.0, 0.0));
    let r = reproject_image(&img, &depth, &target_to_source, &k).unwrap();
    let shift = 20.0 * 0.1 / 2.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let inside = x as f64 - shift >= 0.0;
            assert_eq!(r.mask.data[i], inside, "pixel {x},{y}");
            if inside {
                assert!((r.image.pixels[i][0] - (x as f64 - shift) * 0.01).abs() < 1e-12);
                assert!((r.image.pixels[i][1] - y as f64 * 0.02).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let k = CameraIntrinsics::from_fov(8, 6, 60.0).unwrap();
    let img = Frame::filled(8, 6, [0.5; 3]);
    let depth = DepthMap::constant(7, 6, 1.0);
    assert!(matches!(reproject_image(&img, &depth, &PoseSE3::identity(), &k), Err(Error::Shape { .. })));
}

#[test]
fn forward_warp_of_a_plane_under_identity_is_unchanged() {
    let k = CameraIntrinsics::from_fov(16, 12, 60.0).unwrap();
    let depth = DepthMap::constant(16, 12, 1.5);
    let warped = warp_depth(&depth, &PoseSE3::identity(), &k).unwrap();
    assert_eq!(warped.valid_count(), 16 * 12);
    assert!(warped.values.iter().all(|&d| (d - 1.5).abs() < 1e-12));
}

#[test]
fn forward_warp_moves_a_plane_closer() {
    // moving the camera 0.5 towards a plane at depth 2 leaves it at depth 1.5
    let k = CameraIntrinsics::from_fov(16, 12, 60.0).unwrap();
    let depth = DepthMap::constant(16, 12, 2.0);
    let source_to_target = PoseSE3::from_translation(Vector3::new(0.0, 0.0, -0.5));
    let warped = warp_depth(&depth, &source_to_target, &k).unwrap();
    assert!(warped.valid_count() > 0);
    for i in 0..16 * 12 {
        if warped.valid[i] {
            assert!((warped.values[i] - 1.5).abs() < 1e-12);
        }
    }
}
