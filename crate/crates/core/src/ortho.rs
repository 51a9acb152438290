//! Gravity-aligned ortho-projection of semantic point clouds, benthic cover
//! and enclosed-hole statistics.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::estimation::filter_count;
use crate::fusion::SemanticPointCloud;
use crate::io::{to_u8, write_bytes, write_gray_png, write_rgb_png};
use crate::semantics::ClassTaxonomy;
use crate::{Error, Result};

/// Share of each cell's points, highest first, that decide its content.
pub const TOP_FRACTION: f64 = 0.3;
const MAX_CELLS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCell {
    pub class_id: u8,
    pub color: [f64; 3],
    /// Mean height of the selected points above the plane through the origin.
    pub z: f64,
    pub point_count: usize,
}

/// Raster on the plane normal to gravity. Cell `(i, j)` covers
/// `[(i0 + i)·s, (i0 + i + 1)·s) × [(j0 + j)·s, (j0 + j + 1)·s)` in the
/// `(axis_u, axis_v)` frame, so cell edges sit on multiples of the cell size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoGrid {
    pub cell_size: f64,
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    /// Opposite to gravity.
    pub up: [f64; 3],
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Option<OrthoCell>>,
}

/// Plane axes `(u, v, up)` for a gravity direction, right-handed.
pub fn plane_axes(gravity: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let up = -gravity;
    let seed = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = (seed - up * seed.dot(&up)).normalize();
    let v = up.cross(&u);
    (u, v, up)
}

/// Points per cell, sorted by height (highest first, then by index), of which
/// the leading `⌈0.3·n⌉` (at least one) are selected.
pub fn select_top(heights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..heights.len()).collect();
    order.sort_by(|&a, &b| heights[b].total_cmp(&heights[a]).then(a.cmp(&b)));
    let take = filter_count(TOP_FRACTION, heights.len()).max(1).min(heights.len());
    order.truncate(take);
    order
}

/// Hard majority over class ids, lower id on ties.
pub fn majority(classes: impl IntoIterator<Item = u8>) -> u8 {
    let mut votes = [0usize; 256];
    for c in classes {
        votes[c as usize] += 1;
    }
    let mut best = 0;
    for c in 1..256 {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    best as u8
}

pub fn ortho_project(cloud: &SemanticPointCloud, gravity: [f64; 3], cell_size: f64) -> Result<OrthoGrid> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::Parameter(format!("cell size {cell_size} must be positive")));
    }
    let g = Vector3::from(gravity);
    if !((g.norm() - 1.0).abs() <= 1e-9) {
        return Err(Error::Parameter(format!("gravity {gravity:?} is not a unit vector")));
    }
    let (u, v, up) = plane_axes(&g);
    let binned: Vec<(i64, i64, f64, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.position.iter().all(|c| c.is_finite()))
        .map(|(i, p)| {
            let q = Vector3::from(p.position);
            (
                (q.dot(&u) / cell_size).floor() as i64,
                (q.dot(&v) / cell_size).floor() as i64,
                q.dot(&up),
                i,
            )
        })
        .collect();
    if binned.is_empty() {
        return Err(Error::Degenerate("no finite points to project".into()));
    }
    let i0 = binned.iter().map(|b| b.0).min().unwrap();
    let i1 = binned.iter().map(|b| b.0).max().unwrap();
    let j0 = binned.iter().map(|b| b.1).min().unwrap();
    let j1 = binned.iter().map(|b| b.1).max().unwrap();
    let width = (i1 - i0 + 1) as usize;
    let height = (j1 - j0 + 1) as usize;
    if width.saturating_mul(height) > MAX_CELLS {
        return Err(Error::Parameter(format!("{width}x{height} ortho grid is too large; raise the cell size")));
    }
    let mut buckets: Vec<Vec<(f64, usize)>> = vec![Vec::new(); width * height];
    for &(i, j, z, idx) in &binned {
        buckets[(j - j0) as usize * width + (i - i0) as usize].push((z, idx));
    }
    let cells = buckets
        .iter()
        .map(|b| {
            if b.is_empty() {
                return None;
            }
            let heights: Vec<f64> = b.iter().map(|e| e.0).collect();
            let chosen: Vec<usize> = select_top(&heights).into_iter().map(|k| b[k].1).collect();
            let n = chosen.len() as f64;
            let mut color = [0.0; 3];
            let mut z = 0.0;
            for &i in &chosen {
                let p = &cloud.points[i];
                for c in 0..3 {
                    color[c] += p.color[c] as f64 / 255.0;
                }
                z += Vector3::from(p.position).dot(&up);
            }
            Some(OrthoCell {
                class_id: majority(chosen.iter().map(|&i| cloud.points[i].class_id)),
                color: color.map(|c| c / n),
                z: z / n,
                point_count: b.len(),
            })
        })
        .collect();
    Ok(OrthoGrid {
        cell_size,
        axis_u: u.into(),
        axis_v: v.into(),
        up: up.into(),
        origin: [i0, j0],
        width,
        height,
        cells,
    })
}

impl OrthoGrid {
    pub fn occupied(&self) -> Vec<bool> {
        self.cells.iter().map(Option::is_some).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().flatten().count()
    }

    /// Cells per class id.
    pub fn class_counts(&self) -> [usize; 256] {
        let mut counts = [0; 256];
        for c in self.cells.iter().flatten() {
            counts[c.class_id as usize] += 1;
        }
        counts
    }

    pub fn hole_fraction(&self) -> Result<f64> {
        enclosed_hole_fraction(&self.occupied(), self.width, self.height)
    }
}

/// Per-class share of occupied cells, indexed by class id.
pub fn benthic_cover(grid: &OrthoGrid, taxonomy: &ClassTaxonomy) -> Result<Vec<f64>> {
    let total = grid.occupied_count();
    if total == 0 {
        return Err(Error::Degenerate("ortho grid has no occupied cells".into()));
    }
    let counts = grid.class_counts();
    if let Some(c) = (taxonomy.len()..256).find(|&c| counts[c] > 0) {
        return Err(Error::Taxonomy(format!("cell class {c} is not in the taxonomy")));
    }
    Ok(counts[..taxonomy.len()].iter().map(|&n| n as f64 / total as f64).collect())
}

/// Unoccupied cells not 4-connected to the raster border, as a share of
/// occupied plus enclosed cells.
pub fn enclosed_hole_fraction(occupied: &[bool], width: usize, height: usize) -> Result<f64> {
    if occupied.len() != width * height {
        return Err(Error::Shape {
            expected: (width, height),
            found: (occupied.len(), 1),
        });
    }
    let filled = occupied.iter().filter(|o| **o).count();
    if filled == 0 {
        return Err(Error::Degenerate("no occupied cells".into()));
    }
    let mut outside = vec![false; occupied.len()];
    let mut queue = VecDeque::new();
    for j in 0..height {
        for i in 0..width {
            let border = i == 0 || j == 0 || i + 1 == width || j + 1 == height;
            let k = j * width + i;
            if border && !occupied[k] && !outside[k] {
                outside[k] = true;
                queue.push_back(k);
            }
        }
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = (k % width, k / width);
        let mut visit = |n: usize| {
            if !occupied[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(k - 1);
        }
        if i + 1 < width {
            visit(k + 1);
        }
        if j > 0 {
            visit(k - width);
        }
        if j + 1 < height {
            visit(k + width);
        }
    }
    let enclosed = (0..occupied.len()).filter(|&k| !occupied[k] && !outside[k]).count();
    Ok(enclosed as f64 / (filled + enclosed) as f64)
}

/// Writes `ortho_rgb.png`, `ortho_class.png` and `ortho_height.png`. Rows
/// run from high to low `v` so the maps read like a plan view; empty cells
/// are black.
pub fn write_ortho_pngs(dir: &Path, grid: &OrthoGrid, taxonomy: &ClassTaxonomy) -> Result<()> {
    let (w, h) = (grid.width, grid.height);
    let at = |x: usize, y: usize| grid.cells[(h - 1 - y) * w + x];
    let palette = taxonomy.palette();
    let (zmin, zmax) = grid
        .cells
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.z), b.max(c.z)));
    let span = (zmax - zmin).max(1e-12);
    let mut rgb = Vec::with_capacity(w * h);
    let mut class = Vec::with_capacity(w * h);
    let mut z = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            match at(x, y) {
                Some(c) => {
                    rgb.push(c.color.map(to_u8));
                    class.push(palette.get(c.class_id as usize).copied().unwrap_or([255, 255, 255]));
                    z.push(1 + ((c.z - zmin) / span * 254.0).round() as u8);
                }
                None => {
                    rgb.push([0; 3]);
                    class.push([0; 3]);
                    z.push(0);
                }
            }
        }
    }
    write_rgb_png(&dir.join("ortho_rgb.png"), w, h, &rgb)?;
    write_rgb_png(&dir.join("ortho_class.png"), w, h, &class)?;
    write_gray_png(&dir.join("ortho_height.png"), w, h, &z)
}

pub fn cover_csv(grid: &OrthoGrid, taxonomy: &ClassTaxonomy) -> Result<String> {
    let fractions = benthic_cover(grid, taxonomy)?;
    let counts = grid.class_counts();
    let mut out = String::from("class_id,class_name,cells,fraction\n");
    for (id, f) in fractions.iter().enumerate() {
        let name = taxonomy.name(id as u8).unwrap_or("");
        writeln!(out, "{id},{name},{},{f:.6}", counts[id]).expect("write to string");
    }
    Ok(out)
}

pub fn write_cover_csv(path: &Path, grid: &OrthoGrid, taxonomy: &ClassTaxonomy) -> Result<()> {
    write_bytes(path, cover_csv(grid, taxonomy)?.as_bytes())
}
