use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::labels::argmax;
use super::{LabelMap, ProbabilityGrid};
use crate::geometry::Frame;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub patch_width: usize,
    pub patch_height: usize,
    /// Resolution each patch is resampled to for the predictor.
    pub work_width: usize,
    pub work_height: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            patch_width: 800,
            patch_height: 500,
            work_width: 416,
            work_height: 416,
        }
    }
}

/// Footprint of a patch in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub placement: Placement,
    /// Patch content at the working resolution.
    pub image: Frame,
}

fn axis_positions(size: usize, patch: usize) -> Vec<usize> {
    let n = size.div_ceil(patch);
    if n <= 1 {
        return vec![0];
    }
    let span = (size - patch) as f64;
    (0..n).map(|k| (k as f64 * span / (n - 1) as f64).round() as usize).collect()
}

/// Fewest patches per axis that cover the frame, evenly spaced, so the
/// overlap is as small as possible.
pub fn tile_placements(width: usize, height: usize, patch_width: usize, patch_height: usize) -> Result<Vec<Placement>> {
    if patch_width == 0 || patch_height == 0 || width < patch_width || height < patch_height {
        return Err(Error::Tiling(format!(
            "{width}x{height} frame cannot hold a {patch_width}x{patch_height} patch"
        )));
    }
    let xs = axis_positions(width, patch_width);
    let ys = axis_positions(height, patch_height);
    Ok(ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| Placement {
                y,
                x,
                height: patch_height,
                width: patch_width,
            })
        })
        .collect())
}

/// Source coordinate of a destination pixel under half-pixel alignment.
fn source_coord(dst: usize, dst_size: usize, src_size: usize) -> f64 {
    let s = (dst as f64 + 0.5) * src_size as f64 / dst_size as f64 - 0.5;
    s.clamp(0.0, (src_size - 1) as f64)
}

fn bilinear_taps(dst_size: usize, src_size: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_size)
        .map(|d| {
            let s = source_coord(d, dst_size, src_size);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_size - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn resample<const C: usize>(
    src: &[[f64; C]],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
) -> Vec<[f64; C]> {
    let tx = bilinear_taps(dw, sw);
    let ty = bilinear_taps(dh, sh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let p = |x: usize, y: usize| src[y * sw + x];
            out.push(std::array::from_fn(|c| {
                let top = p(x0, y0)[c] * (1.0 - fx) + p(x1, y0)[c] * fx;
                let bottom = p(x0, y1)[c] * (1.0 - fx) + p(x1, y1)[c] * fx;
                top * (1.0 - fy) + bottom * fy
            }));
        }
    }
    out
}

/// Bilinear resize with half-pixel alignment.
pub fn resize_frame(frame: &Frame, width: usize, height: usize) -> Frame {
    let pixels = resample(&frame.pixels, frame.width, frame.height, width, height);
    Frame {
        width,
        height,
        pixels,
        timestamp_index: frame.timestamp_index,
    }
}

/// Nearest-neighbour resize of hard labels.
pub fn resize_labels(labels: &LabelMap, width: usize, height: usize) -> LabelMap {
    let near = |d: usize, dn: usize, sn: usize| (((d as f64 + 0.5) * sn as f64 / dn as f64) as usize).min(sn - 1);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = near(y, height, labels.height);
        for x in 0..width {
            out.push(labels.labels[sy * labels.width + near(x, width, labels.width)]);
        }
    }
    LabelMap {
        width,
        height,
        labels: out,
        probabilities: None,
    }
}

pub(crate) fn resize_probabilities(p: &ProbabilityGrid, width: usize, height: usize) -> Vec<f64> {
    if p.width == width && p.height == height {
        return p.data.iter().map(|v| *v as f64).collect();
    }
    let tx = bilinear_taps(width, p.width);
    let ty = bilinear_taps(height, p.height);
    let c = p.classes;
    let mut out = Vec::with_capacity(width * height * c);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
            let rows = [
                p.row(y0 * p.width + x0),
                p.row(y0 * p.width + x1),
                p.row(y1 * p.width + x0),
                p.row(y1 * p.width + x1),
            ];
            for k in 0..c {
                out.push((0..4).map(|j| w[j] * rows[j][k] as f64).sum());
            }
        }
    }
    out
}

/// Cuts a frame into overlapping patches resampled to the working size.
pub fn tile_frame(frame: &Frame, config: &TilingConfig) -> Result<Vec<Patch>> {
    let placements = tile_placements(frame.width, frame.height, config.patch_width, config.patch_height)?;
    Ok(placements
        .into_par_iter()
        .map(|pl| {
            let crop = Frame::from_fn(pl.width, pl.height, |x, y| frame.at(pl.x + x, pl.y + y));
            Patch {
                placement: pl,
                image: resize_frame(&crop, config.work_width, config.work_height),
            }
        })
        .collect())
}

/// Averages patch probabilities (resampled back to their footprints) over
/// the frame and takes the argmax, ties to the lower class id. Patches are
/// accumulated in placement order, so the result does not depend on the
/// order they are passed in.
pub fn stitch_predictions(patches: &[(Placement, ProbabilityGrid)], width: usize, height: usize) -> Result<LabelMap> {
    let Some(first) = patches.first() else {
        return Err(Error::Coverage("no patches to stitch".into()));
    };
    let classes = first.1.classes;
    if patches.iter().any(|(_, p)| p.classes != classes) {
        return Err(Error::Coverage("patches disagree on the class count".into()));
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| {
        patches[a].0.cmp(&patches[b].0).then_with(|| {
            let (da, db) = (&patches[a].1.data, &patches[b].1.data);
            da.iter()
                .zip(db)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let resampled: Vec<Vec<f64>> = order
        .par_iter()
        .map(|&i| {
            let (pl, p) = &patches[i];
            resize_probabilities(p, pl.width, pl.height)
        })
        .collect();
    let mut sum = vec![0.0f64; width * height * classes];
    let mut count = vec![0u32; width * height];
    for (&i, grid) in order.iter().zip(&resampled) {
        let pl = patches[i].0;
        if pl.x + pl.width > width || pl.y + pl.height > height {
            return Err(Error::Coverage(format!("patch {pl:?} exceeds the {width}x{height} frame")));
        }
        for y in 0..pl.height {
            for x in 0..pl.width {
                let dst = (pl.y + y) * width + pl.x + x;
                count[dst] += 1;
                let src = &grid[(y * pl.width + x) * classes..(y * pl.width + x + 1) * classes];
                for (s, v) in sum[dst * classes..(dst + 1) * classes].iter_mut().zip(src) {
                    *s += v;
                }
            }
        }
    }
    if let Some(p) = count.iter().position(|c| *c == 0) {
        return Err(Error::Coverage(format!("pixel ({}, {}) is not covered", p % width, p / width)));
    }
    let mut labels = Vec::with_capacity(width * height);
    let mut probs = Vec::with_capacity(width * height * classes);
    for p in 0..width * height {
        let row: Vec<f64> = sum[p * classes..(p + 1) * classes]
            .iter()
            .map(|s| s / count[p] as f64)
            .collect();
        labels.push(argmax(&row) as u8);
        probs.extend(row.iter().map(|v| *v as f32));
    }
    Ok(LabelMap {
        width,
        height,
        labels,
        probabilities: Some(ProbabilityGrid::new(width, height, classes, probs)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_hd_tiling() {
        let p = tile_placements(1920, 1080, 800, 500).unwrap();
        assert_eq!(p.len(), 9);
        let xs: Vec<usize> = p.iter().take(3).map(|q| q.x).collect();
        let ys: Vec<usize> = p.iter().step_by(3).map(|q| q.y).collect();
        assert_eq!(xs, vec![0, 560, 1120]);
        assert_eq!(ys, vec![0, 290, 580]);
        assert_eq!(800 - 560, 240);
        assert_eq!(500 - 290, 210);
    }

    #[test]
    fn exact_patch_is_single() {
        assert_eq!(tile_placements(800, 500, 800, 500).unwrap().len(), 1);
        assert!(matches!(tile_placements(799, 500, 800, 500), Err(Error::Tiling(_))));
    }

    #[test]
    fn coverage_property() {
        for (w, h) in [(1920, 1080), (1000, 700), (2500, 501), (801, 999)] {
            let mut cover = vec![0u32; w * h];
            for p in tile_placements(w, h, 800, 500).unwrap() {
                assert!(p.x + p.width <= w && p.y + p.height <= h);
                for y in p.y..p.y + p.height {
                    for x in p.x..p.x + p.width {
                        cover[y * w + x] += 1;
                    }
                }
            }
            assert!(cover.iter().all(|c| *c >= 1));
        }
    }

    #[test]
    fn two_patch_average() {
        // 2-class toy: A says class 0 with 0.6, B says class 1 with 0.6 on the overlap
        let pl_a = Placement { y: 0, x: 0, height: 1, width: 2 };
        let pl_b = Placement { y: 0, x: 1, height: 1, width: 2 };
        let a = ProbabilityGrid::new(2, 1, 2, vec![0.6, 0.4, 0.6, 0.4]).unwrap();
        let b = ProbabilityGrid::new(2, 1, 2, vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        let s = stitch_predictions(&[(pl_a, a.clone()), (pl_b, b.clone())], 3, 1).unwrap();
        // overlap: (0.6+0.3)/2 = 0.45 vs (0.4+0.7)/2 = 0.55 → class 1
        assert_eq!(s.labels, vec![0, 1, 1]);
        let t = stitch_predictions(&[(pl_b, b), (pl_a, a)], 3, 1).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn ties_go_to_lower_id_and_single_patch_is_identity() {
        let pl = Placement { y: 0, x: 0, height: 1, width: 2 };
        let p = ProbabilityGrid::new(2, 1, 3, vec![0.2, 0.4, 0.4, 0.5, 0.25, 0.25]).unwrap();
        let s = stitch_predictions(&[(pl, p.clone())], 2, 1).unwrap();
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(s.probabilities.unwrap(), p);
    }

    #[test]
    fn uncovered_pixel_errors() {
        let pl = Placement { y: 0, x: 0, height: 1, width: 2 };
        let p = ProbabilityGrid::new(2, 1, 2, vec![0.5; 4]).unwrap();
        assert!(matches!(stitch_predictions(&[(pl, p)], 3, 1), Err(Error::Coverage(_))));
    }
}
