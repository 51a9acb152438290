use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefsfm::fusion::{CloudPoint, SemanticPointCloud};
use reefsfm::ortho::{benthic_cover, enclosed_hole_fraction, ortho_project, OrthoGrid};
use reefsfm::semantics::ClassTaxonomy;
use reefsfm::Error;

const DOWN: [f64; 3] = [0.0, 0.0, -1.0];

fn pt(p: [f64; 3], class_id: u8) -> CloudPoint {
    CloudPoint {
        position: p,
        color: [100, 150, 200],
        class_id,
        uncertainty: 0.0,
    }
}

/// Dense disc of points; class from a few blob centres, height random.
fn disc(seed: u64) -> SemanticPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<([f64; 2], u8)> = (0..6)
        .map(|i| ([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], [5, 6, 1, 2, 7, 14][i]))
        .collect();
    let mut points = Vec::new();
    let step = 0.01;
    for i in -120..=120 {
        for j in -120..=120 {
            let (x, y) = (i as f64 * step, j as f64 * step);
            if x * x + y * y > 1.2 * 1.2 {
                continue;
            }
            let class = centres
                .iter()
                .min_by(|a, b| {
                    let da = (a.0[0] - x).powi(2) + (a.0[1] - y).powi(2);
                    let db = (b.0[0] - x).powi(2) + (b.0[1] - y).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap()
                .1;
            points.push(pt([x, y, rng.random_range(0.0..0.01)], class));
        }
    }
    SemanticPointCloud { points }
}

/// Cells next to empty space or to a cell of another class.
fn boundary_cells(g: &OrthoGrid) -> usize {
    let (w, h) = (g.width as i64, g.height as i64);
    let class = |i: i64, j: i64| {
        if i < 0 || j < 0 || i >= w || j >= h {
            None
        } else {
            g.cells[(j * w + i) as usize].as_ref().map(|c| c.class_id)
        }
    };
    let mut n = 0;
    for j in 0..h {
        for i in 0..w {
            let Some(c) = class(i, j) else { continue };
            let edge = (-1..=1).any(|dj| (-1..=1).any(|di| class(i + di, j + dj) != Some(c)));
            n += edge as usize;
        }
    }
    n
}

#[test]
fn rotation_about_gravity_preserves_cover() {
    let tax = ClassTaxonomy::default();
    let cloud = disc(1);
    let base = ortho_project(&cloud, DOWN, 0.05).unwrap();
    let tolerance = boundary_cells(&base);
    let counts = base.class_counts();
    for angle in [0.3, 1.1, 2.5] {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        let rotated = SemanticPointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| pt((r * Vector3::from(p.position)).into(), p.class_id))
                .collect(),
        };
        let g = ortho_project(&rotated, DOWN, 0.05).unwrap();
        let rc = g.class_counts();
        for c in 0..tax.len() {
            let diff = counts[c].abs_diff(rc[c]);
            assert!(diff <= tolerance, "class {c} at {angle} rad: {} vs {}", counts[c], rc[c]);
        }
        let cover = benthic_cover(&g, &tax).unwrap();
        assert!((cover.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn shifting_along_gravity_only_moves_heights() {
    let cloud = disc(2);
    let base = ortho_project(&cloud, DOWN, 0.05).unwrap();
    let shifted = SemanticPointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| pt([p.position[0], p.position[1], p.position[2] + 3.7], p.class_id))
            .collect(),
    };
    let g = ortho_project(&shifted, DOWN, 0.05).unwrap();
    assert_eq!((g.width, g.height, g.origin), (base.width, base.height, base.origin));
    for (a, b) in g.cells.iter().zip(&base.cells) {
        match (a, b) {
            (Some(a), Some(b)) => {
                assert_eq!(a.class_id, b.class_id);
                assert_eq!(a.point_count, b.point_count);
                assert!((a.z - b.z - 3.7).abs() < 1e-9);
            }
            (None, None) => {}
            _ => panic!("occupancy changed"),
        }
    }
}

#[test]
fn top_thirty_percent_hand_case() {
    // z = 1..10, coral above 8: the selected points are z = 10, 9, 8
    let points = (1..=10).map(|z| pt([0.01, 0.01, z as f64], if z >= 8 { 1 } else { 5 })).collect();
    let g = ortho_project(&SemanticPointCloud { points }, DOWN, 0.05).unwrap();
    let cell = g.cells[0].as_ref().unwrap();
    assert_eq!(cell.class_id, 1);
    assert!((cell.z - 9.0).abs() < 1e-12);
    assert_eq!(cell.point_count, 10);
}

#[test]
fn uniform_class_wins_regardless_of_heights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = (0..37).map(|_| pt([0.02, 0.03, rng.random_range(-1.0..1.0)], 6)).collect();
    let g = ortho_project(&SemanticPointCloud { points }, DOWN, 0.1).unwrap();
    assert_eq!(g.cells[0].as_ref().unwrap().class_id, 6);
}

#[test]
fn invalid_inputs() {
    let cloud = SemanticPointCloud {
        points: vec![pt([0.0; 3], 5)],
    };
    assert!(matches!(ortho_project(&cloud, DOWN, 0.0), Err(Error::Parameter(_))));
    assert!(matches!(ortho_project(&cloud, [0.0, 0.0, -2.0], 0.05), Err(Error::Parameter(_))));
    assert!(ortho_project(&SemanticPointCloud::default(), DOWN, 0.05).is_err());
}

#[test]
fn cover_hand_case() {
    let tax = ClassTaxonomy::default();
    let (sand, coral, rock) = (5, 1, 6);
    let points = vec![
        pt([0.01, 0.01, 0.0], sand),
        pt([0.11, 0.01, 0.0], sand),
        pt([0.01, 0.11, 0.0], coral),
        pt([0.11, 0.11, 0.0], rock),
    ];
    let g = ortho_project(&SemanticPointCloud { points }, DOWN, 0.1).unwrap();
    let cover = benthic_cover(&g, &tax).unwrap();
    assert_eq!((cover[sand as usize], cover[coral as usize], cover[rock as usize]), (0.5, 0.25, 0.25));
}

/// Flood fill from the border over empty cells.
fn flood_fill_holes(occ: &[bool], w: usize, h: usize) -> f64 {
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for j in 0..h {
        for i in 0..w {
            if (i == 0 || j == 0 || i == w - 1 || j == h - 1) && !occ[j * w + i] {
                outside[j * w + i] = true;
                queue.push_back((i, j));
            }
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        let mut visit = |x: usize, y: usize| {
            let k = y * w + x;
            if !occ[k] && !outside[k] {
                outside[k] = true;
                queue.push_back((x, y));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < w {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < h {
            visit(i, j + 1);
        }
    }
    let occupied = occ.iter().filter(|&&o| o).count();
    let enclosed = (0..w * h).filter(|&k| !occ[k] && !outside[k]).count();
    enclosed as f64 / (occupied + enclosed) as f64
}

proptest! {
    #[test]
    fn hole_fraction_matches_flood_fill(bits in prop::collection::vec(prop::bool::weighted(0.7), 32 * 32)) {
        prop_assume!(bits.iter().any(|&b| b));
        let got = enclosed_hole_fraction(&bits, 32, 32).unwrap();
        prop_assert_eq!(got, flood_fill_holes(&bits, 32, 32));
    }
}
