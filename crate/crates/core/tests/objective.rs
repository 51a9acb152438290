use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefsfm::geometry::{BoolGrid, CameraIntrinsics, DepthMap, Frame, PoseSE3};
use reefsfm::objective::{
    geometric_consistency, photometric_loss, smoothness_reg, softplus_inverse, total_objective, DepthDecoder,
    LossWeights, PairProblem, PoseParams, DIVISION_EPS,
};
use reefsfm::semantics::ClassTaxonomy;
use reefsfm::synth::{generate_scene, generate_trajectory, render_sequence, SynthConfig};

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::from_fov(24, 16, 60.0).unwrap()
}

fn texture(w: usize, h: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..w * h).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
    Frame::new(w, h, pixels, 0).unwrap()
}

#[test]
fn scaled_second_depth_gives_one_half() {
    let k = camera();
    let a = DepthMap::constant(24, 16, 2.0);
    let b = DepthMap::constant(24, 16, 6.0);
    let g = geometric_consistency(&a, &b, &PoseSE3::identity(), &k).unwrap();
    // (3z - z) / (3z + z) with the denominator guard
    let expected = 4.0 / (8.0 + DIVISION_EPS);
    assert!((g.value - expected).abs() < 1e-12, "{}", g.value);
    assert!((g.value - 0.5).abs() < 1e-7);
    for (v, ok) in g.map.iter().zip(&g.valid) {
        if *ok {
            assert!((v - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn consistent_plane_has_no_residual() {
    // camera b sits 0.5 closer to a fronto-parallel plane at depth 2
    let k = camera();
    let a = DepthMap::constant(24, 16, 2.0);
    let b = DepthMap::constant(24, 16, 1.5);
    let t_ab = PoseSE3::from_translation(Vector3::new(0.0, 0.0, -0.5));
    let g = geometric_consistency(&a, &b, &t_ab, &k).unwrap();
    assert!(g.value < 1e-6, "{}", g.value);
    let same = geometric_consistency(&a, &a, &PoseSE3::identity(), &k).unwrap();
    assert_eq!(same.value, 0.0);
}

#[test]
fn geometric_residual_ignores_global_scale() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let da: Vec<f64> = (0..24 * 16).map(|_| rng.random_range(1.0..3.0)).collect();
    let db: Vec<f64> = (0..24 * 16).map(|_| rng.random_range(1.0..3.0)).collect();
    let t = PoseSE3::from_axis_angle(&Vector3::new(0.02, -0.03, 0.01), Vector3::new(0.05, 0.02, 0.1));
    let base = geometric_consistency(
        &DepthMap::from_values(24, 16, da.clone()).unwrap(),
        &DepthMap::from_values(24, 16, db.clone()).unwrap(),
        &t,
        &k,
    )
    .unwrap()
    .value;
    for s in [0.1, 0.5, 4.0, 37.0] {
        let scaled = geometric_consistency(
            &DepthMap::from_values(24, 16, da.iter().map(|d| d * s).collect()).unwrap(),
            &DepthMap::from_values(24, 16, db.iter().map(|d| d * s).collect()).unwrap(),
            &t.scaled(s),
            &k,
        )
        .unwrap()
        .value;
        // exact up to the denominator guard, which is not scaled
        assert!((scaled - base).abs() < 1e-6 * base, "scale {s}: {scaled} vs {base}");
    }
}

#[test]
fn zero_weights_give_zero_total() {
    let k = camera();
    let (a, b) = (texture(24, 16, 1), texture(24, 16, 2));
    let d = DepthMap::constant(24, 16, 2.0);
    let t = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
    let l = total_objective(&a, &b, &d, &d, &t, &k, &LossWeights::zero()).unwrap();
    assert_eq!(l.total, 0.0);
    assert!(l.photometric_ab > 0.0 && l.photometric_ba > 0.0);
}

#[test]
fn static_identical_frames_leave_only_smoothness() {
    let k = camera();
    let a = texture(24, 16, 5);
    let d = DepthMap::from_fn(24, 16, |x, y| 1.0 + 0.05 * x as f64 + 0.02 * y as f64);
    let w = LossWeights::default();
    let l = total_objective(&a, &a, &d, &d, &PoseSE3::identity(), &k, &w).unwrap();
    assert!(l.photometric_ab.abs() < 1e-12 && l.photometric_ba.abs() < 1e-12 && l.geometric.abs() < 1e-12);
    assert!(l.smooth_a > 0.0);
    assert!((l.total - w.smoothness * (l.smooth_a + l.smooth_b)).abs() < 1e-12);
}

#[test]
fn ground_truth_pair_beats_perturbations() {
    let tax = ClassTaxonomy::default();
    let mut c = SynthConfig::default();
    c.trajectory.frame_count = 3;
    c.camera.width = 48;
    c.camera.height = 32;
    let k = c.camera.intrinsics().unwrap();
    let scene = generate_scene(2, &c, &tax).unwrap();
    let poses = generate_trajectory(&c.trajectory, 2).unwrap();
    let views = render_sequence(&scene, &poses[..2], &k).unwrap();
    let t_ab = poses[1].inverse().compose(&poses[0]);
    let w = LossWeights::default();
    let (a, b) = (&views[0], &views[1]);
    let truth = total_objective(&a.frame, &b.frame, &a.depth, &b.depth, &t_ab, &k, &w).unwrap().total;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..20 {
        let dw = Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
        let dt = Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
        let t = PoseSE3::from_axis_angle(&dw, dt).compose(&t_ab);
        let s: f64 = rng.random_range(0.9..1.1);
        let jitter = |d: &DepthMap, rng: &mut ChaCha8Rng| {
            let mut out = d.clone();
            for v in out.values.iter_mut() {
                *v *= s * rng.random_range(0.98..1.02);
            }
            out
        };
        let (da, db) = (jitter(&a.depth, &mut rng), jitter(&b.depth, &mut rng));
        let l = total_objective(&a.frame, &b.frame, &da, &db, &t, &k, &w).unwrap().total;
        assert!(l > truth, "perturbation {i}: {l} <= {truth}");
    }
}

fn problem_theta(decoder: &DepthDecoder, depth: f64, pose: [f64; 6]) -> Vec<f64> {
    let raw = softplus_inverse(depth);
    let mut theta = vec![raw; 2 * decoder.len()];
    theta.extend(pose);
    theta
}

#[test]
fn constant_images_have_no_photometric_gradient() {
    let k = camera();
    let img = Frame::filled(24, 16, [0.4, 0.5, 0.6]);
    let decoder = DepthDecoder::new(4, 3, 24, 16).unwrap();
    let mut p = PairProblem::new(&img, &img, k, decoder.clone(), 1);
    p.weights = LossWeights {
        photometric: 1.0,
        smoothness: 0.0,
        geometric: 0.0,
        ..LossWeights::default()
    };
    let mut theta = problem_theta(&decoder, 2.0, PoseParams::from_pose(&PoseSE3::from_translation(Vector3::new(0.05, 0.0, 0.0))).0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for v in theta.iter_mut().take(2 * decoder.len()) {
        *v += rng.random_range(-0.2..0.2);
    }
    let (_, g, _) = p.gradient(&theta).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-12), "max {}", g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
}

#[test]
fn symmetric_static_scene_is_stationary() {
    let k = camera();
    let img = texture(24, 16, 8);
    let decoder = DepthDecoder::new(4, 3, 24, 16).unwrap();
    let p = PairProblem::new(&img, &img, k, decoder.clone(), 1);
    let theta = problem_theta(&decoder, 1.5, [0.0; 6]);
    let (l, g, _) = p.gradient(&theta).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(l.total.abs() < 1e-12);
    assert!(norm < 1e-8, "{norm}");
}

#[test]
fn wrong_parameter_count_is_rejected() {
    let k = camera();
    let img = texture(24, 16, 8);
    let decoder = DepthDecoder::new(4, 3, 24, 16).unwrap();
    let p = PairProblem::new(&img, &img, k, decoder, 1);
    assert!(p.gradient(&[0.0; 5]).is_err());
    let mut theta = vec![0.5; p.parameter_count()];
    theta[0] = f64::NAN;
    assert!(p.evaluate(&theta).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn components_are_non_negative(seed in 0u64..1000, tx in -0.2f64..0.2, tz in -0.2f64..0.2) {
        let k = camera();
        let (a, b) = (texture(24, 16, seed), texture(24, 16, seed + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let da = DepthMap::from_values(24, 16, (0..24 * 16).map(|_| rng.random_range(0.5..4.0)).collect()).unwrap();
        let db = DepthMap::from_values(24, 16, (0..24 * 16).map(|_| rng.random_range(0.5..4.0)).collect()).unwrap();
        let t = PoseSE3::from_translation(Vector3::new(tx, 0.0, tz));
        if let Ok(l) = total_objective(&a, &b, &da, &db, &t, &k, &LossWeights::default()) {
            for v in [l.photometric_ab, l.photometric_ba, l.smooth_a, l.smooth_b, l.geometric] {
                prop_assert!(v >= 0.0);
            }
        }
        prop_assert!(smoothness_reg(&a, &da).unwrap() >= 0.0);
    }

    #[test]
    fn photometric_is_zero_on_identical_and_symmetric_for_l1(seed in 0u64..1000) {
        let (a, b) = (texture(9, 7, seed), texture(9, 7, seed + 7));
        let mask = BoolGrid::filled(9, 7, true);
        prop_assert_eq!(photometric_loss(&a, &a, &mask, 0.85).unwrap(), 0.0);
        let ab = photometric_loss(&a, &b, &mask, 0.0).unwrap();
        let ba = photometric_loss(&b, &a, &mask, 0.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn masked_pixels_do_not_matter(seed in 0u64..1000) {
        let (a, b) = (texture(9, 7, seed), texture(9, 7, seed + 3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = BoolGrid::filled(9, 7, true);
        for m in mask.data.iter_mut() {
            *m = rng.random_bool(0.7);
        }
        prop_assume!(mask.count() > 0);
        let mut c = b.clone();
        for (i, px) in c.pixels.iter_mut().enumerate() {
            if !mask.data[i] {
                *px = [rng.random_range(0.0..1.0); 3];
            }
        }
        let mut a2 = a.clone();
        for (i, px) in a2.pixels.iter_mut().enumerate() {
            if !mask.data[i] {
                *px = [0.0; 3];
            }
        }
        let base = photometric_loss(&a, &b, &mask, 0.85).unwrap();
        prop_assert_eq!(base, photometric_loss(&a2, &c, &mask, 0.85).unwrap());
    }
}
