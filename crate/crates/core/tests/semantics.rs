use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reefsfm::semantics::{
    group_classes, mask_unwanted, resize_labels, stitch_predictions, tile_placements, ClassTaxonomy, LabelMap,
    Placement, ProbabilityGrid, TilingConfig, CLASS_COUNT,
};
use reefsfm::Error;

/// Blobby label map: nearest of a few random seeds.
fn blob_labels(w: usize, h: usize, seed: u64) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<(f64, f64, u8)> = (0..25)
        .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(1..CLASS_COUNT as u8)))
        .collect();
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let best = seeds
                .iter()
                .min_by(|a, b| ((a.0 - fx).powi(2) + (a.1 - fy).powi(2)).total_cmp(&((b.0 - fx).powi(2) + (b.1 - fy).powi(2))))
                .unwrap();
            labels.push(best.2);
        }
    }
    LabelMap::new(w, h, labels).unwrap()
}

fn one_hot_patches(labels: &LabelMap, config: &TilingConfig) -> Vec<(Placement, ProbabilityGrid)> {
    tile_placements(labels.width, labels.height, config.patch_width, config.patch_height)
        .unwrap()
        .into_iter()
        .map(|pl| {
            let crop: Vec<u8> =
                (0..pl.height).flat_map(|y| (0..pl.width).map(move |x| (x, y))).map(|(x, y)| labels.at(pl.x + x, pl.y + y)).collect();
            let crop = LabelMap::new(pl.width, pl.height, crop).unwrap();
            let work = resize_labels(&crop, config.work_width, config.work_height);
            (pl, ProbabilityGrid::one_hot(&work, CLASS_COUNT))
        })
        .collect()
}

#[test]
fn full_hd_tile_stitch_round_trip() {
    let config = TilingConfig::default();
    let truth = blob_labels(1920, 1080, 1);
    let patches = one_hot_patches(&truth, &config);
    assert_eq!(patches.len(), 9);
    let stitched = stitch_predictions(&patches, 1920, 1080).unwrap();
    let agree = stitched.labels.iter().zip(&truth.labels).filter(|(a, b)| a == b).count();
    let share = agree as f64 / truth.labels.len() as f64;
    assert!(share >= 0.99, "agreement {share}");
}

#[test]
fn stitching_ignores_patch_order() {
    let config = TilingConfig {
        patch_width: 40,
        patch_height: 30,
        work_width: 24,
        work_height: 24,
    };
    let truth = blob_labels(100, 70, 2);
    let mut patches = one_hot_patches(&truth, &config);
    let base = stitch_predictions(&patches, 100, 70).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        patches.shuffle(&mut rng);
        assert_eq!(stitch_predictions(&patches, 100, 70).unwrap(), base);
    }
}

#[test]
fn overlapping_votes_are_averaged() {
    // 3x1 frame, patches over x = 0..2 and x = 1..3; the shared pixel gets
    // class 3: (0.6 + 0.3)/2 = 0.45 and class 5: (0.4 + 0.6)/2 = 0.5
    let row = |p3: f32, p5: f32, p0: f32| {
        let mut r = vec![0.0f32; 6];
        r[3] = p3;
        r[5] = p5;
        r[0] = p0;
        r
    };
    let a = ProbabilityGrid::new(2, 1, 6, [row(0.6, 0.4, 0.0), row(0.6, 0.4, 0.0)].concat()).unwrap();
    let b = ProbabilityGrid::new(2, 1, 6, [row(0.3, 0.6, 0.1), row(0.3, 0.6, 0.1)].concat()).unwrap();
    let pa = Placement { x: 0, y: 0, width: 2, height: 1 };
    let pb = Placement { x: 1, y: 0, width: 2, height: 1 };
    let s = stitch_predictions(&[(pa, a.clone()), (pb, b)], 3, 1).unwrap();
    assert_eq!(s.labels, vec![3, 5, 5]);
    // a single patch is passed through
    let single = stitch_predictions(&[(pa, a)], 2, 1).unwrap();
    assert_eq!(single.labels, vec![3, 3]);
    // a pixel no patch covers is an error
    let c = ProbabilityGrid::new(1, 1, 6, row(1.0, 0.0, 0.0)).unwrap();
    let pc = Placement { x: 0, y: 0, width: 1, height: 1 };
    assert!(matches!(stitch_predictions(&[(pc, c)], 2, 1), Err(Error::Coverage(_))));
}

#[test]
fn masking_counts() {
    let tax = ClassTaxonomy::default();
    let bg = tax.id("background").unwrap();
    let sand = tax.id("sand").unwrap();
    let labels: Vec<u8> = (0..100).map(|i| if i % 10 < 3 { bg } else { sand }).collect();
    let map = LabelMap::new(10, 10, labels).unwrap();
    let unwanted: BTreeSet<u8> = tax.ids(&["background".into(), "human".into(), "fish".into()]).unwrap();
    assert_eq!(mask_unwanted(&map, &unwanted, &tax).unwrap().count(), 70);
    assert_eq!(mask_unwanted(&map, &BTreeSet::new(), &tax).unwrap().count(), 100);
    let all_bg = LabelMap::filled(4, 4, bg);
    assert_eq!(mask_unwanted(&all_bg, &unwanted, &tax).unwrap().count(), 0);
    assert!(matches!(mask_unwanted(&map, &BTreeSet::from([40]), &tax), Err(Error::Taxonomy(_))));
}

#[test]
fn substrate_grouping_merges_rubble() {
    let tax = ClassTaxonomy::default();
    let g = tax.grouping("substrate").unwrap();
    let rubble = LabelMap::filled(5, 5, tax.id("rubble").unwrap());
    let grouped = group_classes(&rubble, &g.as_map()).unwrap();
    let sand = group_classes(&LabelMap::filled(1, 1, tax.id("sand").unwrap()), &g.as_map()).unwrap();
    assert!(grouped.labels.iter().all(|&l| l == sand.labels[0]));
    let identity = tax.identity_grouping();
    assert_eq!(group_classes(&rubble, &identity.as_map()).unwrap(), rubble);
    let partial: BTreeMap<u8, u8> = [(0, 0)].into_iter().collect();
    assert!(matches!(group_classes(&rubble, &partial), Err(Error::Grouping(_))));
}

#[test]
fn taxonomy_rejects_duplicate_names() {
    let tax = ClassTaxonomy::default();
    let text = tax.to_toml_string().replacen("name = \"sand\"", "name = \"rock\"", 1);
    assert!(ClassTaxonomy::from_toml_str(&text).is_err());
    assert_eq!(ClassTaxonomy::from_toml_str(&tax.to_toml_string()).unwrap(), tax);
}

proptest! {
    #[test]
    fn keep_and_complement_partition_pixels(labels in prop::collection::vec(0u8..20, 1..200), set in prop::collection::btree_set(0u8..20, 0..20)) {
        let tax = ClassTaxonomy::default();
        let map = LabelMap::new(labels.len(), 1, labels).unwrap();
        let complement: BTreeSet<u8> = (0..20).filter(|c| !set.contains(c)).collect();
        let a = mask_unwanted(&map, &set, &tax).unwrap();
        let b = mask_unwanted(&map, &complement, &tax).unwrap();
        prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x ^ y));
    }

    #[test]
    fn grouping_matches_scalar_loop_and_keeps_mass(labels in prop::collection::vec(0u8..20, 1..300)) {
        let tax = ClassTaxonomy::default();
        let g = tax.grouping("cover").unwrap();
        let map = g.as_map();
        let lm = LabelMap::new(labels.len(), 1, labels.clone()).unwrap();
        let out = group_classes(&lm, &map).unwrap();
        for (o, l) in out.labels.iter().zip(&labels) {
            prop_assert_eq!(*o, map[l]);
        }
        let h = out.histogram(g.group_count());
        prop_assert_eq!(h.iter().sum::<usize>(), labels.len());
    }
}
