use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{box_blur, Octaves};
use super::trajectory::footprint_ahead;
use super::{SceneConfig, SynthConfig};
use crate::semantics::ClassTaxonomy;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub id: usize,
    pub position: [f64; 3],
}

/// A measured marker pair with its true distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerPair {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Heightfield scene on a regular grid of texels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub x0: f64,
    pub y0: f64,
    pub texel: f64,
    pub nx: usize,
    pub ny: usize,
    /// Height per grid node, row-major (y rows).
    pub heights: Vec<f64>,
    pub classes: Vec<u8>,
    pub colors: Vec<[f64; 3]>,
    pub background_class: u8,
    pub water_color: [f64; 3],
    pub markers: Vec<Marker>,
    pub marker_pairs: Vec<MarkerPair>,
    pub min_height: f64,
    pub max_height: f64,
    /// Upper bound on |∇h| of the bilinear surface.
    pub max_slope: f64,
}

/// Natural-looking surface color per class name (display palettes are for
/// maps, not rendering).
fn appearance(name: &str) -> Option<[f64; 3]> {
    Some(match name {
        "massive coral" => [0.78, 0.55, 0.32],
        "branching coral" => [0.85, 0.72, 0.45],
        "encrusting coral" => [0.62, 0.38, 0.55],
        "soft coral" => [0.80, 0.45, 0.58],
        "sand" => [0.90, 0.86, 0.72],
        "rock" => [0.48, 0.45, 0.42],
        "rubble" => [0.70, 0.66, 0.58],
        "dead branching coral" => [0.80, 0.80, 0.78],
        "dead massive coral" => [0.66, 0.66, 0.68],
        "dead coral" => [0.74, 0.71, 0.68],
        "macroalgae" => [0.35, 0.52, 0.26],
        "seagrass" => [0.42, 0.62, 0.30],
        _ => return None,
    })
}

/// Raise of the surface above the base terrain per class.
fn relief(name: &str) -> f64 {
    match name {
        "massive coral" => 0.10,
        "branching coral" => 0.08,
        "soft coral" => 0.05,
        "encrusting coral" => 0.03,
        "rock" => 0.05,
        "dead massive coral" => 0.05,
        "dead branching coral" => 0.04,
        "dead coral" => 0.03,
        "macroalgae" => 0.02,
        "rubble" => 0.01,
        "seagrass" => 0.01,
        _ => 0.0,
    }
}

impl SyntheticScene {
    pub fn x_max(&self) -> f64 {
        self.x0 + (self.nx - 1) as f64 * self.texel
    }

    pub fn y_max(&self) -> f64 {
        self.y0 + (self.ny - 1) as f64 * self.texel
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && y >= self.y0 && x <= self.x_max() && y <= self.y_max()
    }

    fn cell(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        if !self.contains(x, y) {
            return None;
        }
        let u = (x - self.x0) / self.texel;
        let v = (y - self.y0) / self.texel;
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        Some((i, j, u - i as f64, v - j as f64))
    }

    /// Bilinear surface height; `None` outside the scene.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let (i, j, fx, fy) = self.cell(x, y)?;
        let h = |a: usize, b: usize| self.heights[b * self.nx + a];
        let top = h(i, j) + (h(i + 1, j) - h(i, j)) * fx;
        let bottom = h(i, j + 1) + (h(i + 1, j + 1) - h(i, j + 1)) * fx;
        Some(top + (bottom - top) * fy)
    }

    pub fn color_at(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (i, j, fx, fy) = self.cell(x, y)?;
        let c = |a: usize, b: usize| self.colors[b * self.nx + a];
        Some(std::array::from_fn(|k| {
            let top = c(i, j)[k] + (c(i + 1, j)[k] - c(i, j)[k]) * fx;
            let bottom = c(i, j + 1)[k] + (c(i + 1, j + 1)[k] - c(i, j + 1)[k]) * fx;
            top + (bottom - top) * fy
        }))
    }

    /// Class of the nearest texel.
    pub fn class_at(&self, x: f64, y: f64) -> Option<u8> {
        if !self.contains(x, y) {
            return None;
        }
        let i = (((x - self.x0) / self.texel).round() as usize).min(self.nx - 1);
        let j = (((y - self.y0) / self.texel).round() as usize).min(self.ny - 1);
        Some(self.classes[j * self.nx + i])
    }

    /// Fraction of texels per class id.
    pub fn class_fractions(&self, classes: usize) -> Vec<f64> {
        let mut h = vec![0usize; classes];
        for &c in &self.classes {
            h[c as usize] += 1;
        }
        h.iter().map(|&n| n as f64 / self.classes.len() as f64).collect()
    }

    pub fn marker(&self, id: usize) -> Option<&Marker> {
        self.markers.iter().find(|m| m.id == id)
    }
}

/// Generates a scene whose extent covers the configured trajectory.
pub fn generate_scene(seed: u64, config: &SynthConfig, taxonomy: &ClassTaxonomy) -> Result<SyntheticScene> {
    config.validate()?;
    let sc: &SceneConfig = &config.scene;
    let traj = &config.trajectory;
    let travel = traj.travel();
    let x0 = -sc.margin_behind;
    let x1 = travel + sc.margin_ahead;
    let y0 = -sc.half_width;
    let nx = ((x1 - x0) / sc.texel).round() as usize + 1;
    let ny = ((2.0 * sc.half_width) / sc.texel).round() as usize + 1;
    if nx < 2 || ny < 2 {
        return Err(Error::Config("scene smaller than two texels".into()));
    }
    let width = (nx - 1) as f64 * sc.texel;
    let height = (ny - 1) as f64 * sc.texel;
    let rect = (x0, y0, width, height);
    let n = nx * ny;
    let pos = |i: usize| (x0 + (i % nx) as f64 * sc.texel, y0 + (i / nx) as f64 * sc.texel);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain = Octaves::new(&mut rng, rect, sc.terrain_wavelength, 3, 0.5);
    let luminance = Octaves::new(&mut rng, rect, 0.3, 3, 0.6);
    let chroma = Octaves::new(&mut rng, rect, 0.4, 2, 0.5);

    // each class in turn claims the highest-valued unclaimed texels of its
    // own smooth field, which gives blob-shaped patches with exact cover
    let mut cover: Vec<(u8, f64, f64)> = sc
        .cover
        .iter()
        .map(|(name, f)| Ok((taxonomy.id(name).map_err(|e| Error::Config(e.to_string()))?, *f, relief(name))))
        .collect::<Result<_>>()?;
    cover.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let mut classes = vec![0u8; n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut cum = 0.0;
    let mut claimed = 0;
    for (k, &(id, f, _)) in cover.iter().enumerate() {
        cum += f;
        let end = if k + 1 == cover.len() { n } else { ((cum * n as f64).round() as usize).max(claimed) };
        let field_k = Octaves::new(&mut rng, rect, sc.class_wavelength, 2, 0.3);
        let value: Vec<f64> = free.iter().map(|&i| field_k.eval(pos(i).0, pos(i).1)).collect();
        let mut order: Vec<usize> = (0..free.len()).collect();
        order.sort_by(|&a, &b| value[b].total_cmp(&value[a]).then(free[a].cmp(&free[b])));
        let take = end - claimed;
        let mut taken = vec![false; free.len()];
        for &o in &order[..take] {
            classes[free[o]] = id;
            taken[o] = true;
        }
        free = free.iter().zip(&taken).filter(|(_, t)| !**t).map(|(i, _)| *i).collect();
        claimed = end;
    }

    let raise: Vec<[f64; 1]> = classes
        .iter()
        .map(|&c| [relief(taxonomy.name(c).unwrap_or("")) * sc.relief_scale])
        .collect();
    let raise = box_blur(&raise, nx, ny, 12);
    let heights: Vec<f64> = (0..n)
        .map(|i| {
            let (x, y) = pos(i);
            sc.terrain_amplitude * (2.0 * terrain.eval(x, y) - 1.0) + raise[i][0]
        })
        .collect();
    let min_height = heights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_height = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let raw_colors: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let (x, y) = pos(i);
            let name = taxonomy.name(classes[i]).unwrap_or("");
            let base = appearance(name).unwrap_or_else(|| taxonomy.classes[classes[i] as usize].color.map(|c| c as f64 / 255.0));
            let l = 1.0 - sc.texture_contrast / 2.0 + sc.texture_contrast * luminance.eval(x, y);
            let ch = (chroma.eval(x, y) - 0.5) * 0.3 * sc.texture_contrast;
            [base[0] * l * (1.0 + ch), base[1] * l, base[2] * l * (1.0 - ch)]
        })
        .collect();
    let blurred = box_blur(&raw_colors, nx, ny, 2);
    let water = [0.08, 0.32, 0.42];
    let span = (max_height - min_height).max(1e-9);
    let colors = blurred
        .iter()
        .zip(&heights)
        .map(|(c, h)| {
            let depth = (max_height - h) / span;
            let t = sc.tint * (0.5 + 0.5 * depth);
            std::array::from_fn(|k| (c[k] * (1.0 - t) + water[k] * t).clamp(0.0, 1.0))
        })
        .collect();

    let mut max_slope: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let h = heights[j * nx + i];
            if i + 1 < nx {
                max_slope = max_slope.max((heights[j * nx + i + 1] - h).abs() / sc.texel);
            }
            if j + 1 < ny {
                max_slope = max_slope.max((heights[(j + 1) * nx + i] - h).abs() / sc.texel);
            }
        }
    }

    let mut scene = SyntheticScene {
        seed,
        x0,
        y0,
        texel: sc.texel,
        nx,
        ny,
        heights,
        classes,
        colors,
        background_class: taxonomy.id("background")?,
        water_color: water,
        markers: Vec::new(),
        marker_pairs: Vec::new(),
        min_height,
        max_height,
        max_slope: max_slope * std::f64::consts::SQRT_2 + 1e-9,
    };
    place_markers(&mut scene, &mut rng, config)?;
    Ok(scene)
}

fn place_markers(scene: &mut SyntheticScene, rng: &mut ChaCha8Rng, config: &SynthConfig) -> Result<()> {
    let sc = &config.scene;
    if sc.marker_count == 0 {
        return Ok(());
    }
    // markers lie where the optical axis sweeps the floor
    let ahead = footprint_ahead(&config.trajectory);
    let lo_x = (ahead - 0.15).max(scene.x0 + 0.05);
    let hi_x = (config.trajectory.travel() + ahead + 0.15).min(scene.x_max() - 0.05);
    let half = (0.45 * sc.half_width).min(0.4);
    let mut markers: Vec<Marker> = Vec::new();
    let mut min_sep = 0.15;
    let mut attempts = 0;
    while markers.len() < sc.marker_count {
        attempts += 1;
        if attempts % 2000 == 0 {
            min_sep *= 0.7;
        }
        let x = rng.random_range(lo_x..=hi_x.max(lo_x));
        let y = rng.random_range(-half..=half);
        let z = scene.height_at(x, y).expect("inside scene");
        let p = Vector3::new(x, y, z);
        if markers.iter().all(|m| (Vector3::from(m.position) - p).norm() >= min_sep) {
            markers.push(Marker {
                id: markers.len(),
                position: [x, y, z],
            });
        }
    }
    let mut pairs: Vec<MarkerPair> = Vec::new();
    for a in 0..markers.len() {
        for b in a + 1..markers.len() {
            let distance = (Vector3::from(markers[a].position) - Vector3::from(markers[b].position)).norm();
            pairs.push(MarkerPair { a, b, distance });
        }
    }
    let (mut far, mut near): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.distance >= sc.min_marker_distance);
    far.shuffle(rng);
    near.sort_by(|p, q| q.distance.total_cmp(&p.distance));
    far.extend(near);
    far.truncate(sc.marker_pairs);
    far.sort_by_key(|p| (p.a, p.b));
    scene.markers = markers;
    scene.marker_pairs = far;
    Ok(())
}
