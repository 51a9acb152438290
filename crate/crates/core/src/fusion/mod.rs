//! Sparse TSDF fusion of depth, color and class votes, semantic point-cloud
//! extraction and the point uncertainty filter.

mod ply;

use std::collections::{BTreeSet, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimation::{filter_count, UncertaintyMap};
use crate::geometry::{check_dims, BoolGrid, CameraIntrinsics, DepthMap, Frame, PoseSE3};
use crate::semantics::{LabelMap, CLASS_COUNT, UNLABELED};
use crate::{Error, Result};

pub use ply::{ply_bytes, parse_ply, read_ply, write_ply};

/// Voxels per block edge.
pub const BLOCK_SIDE: i32 = 8;
const BLOCK_VOXELS: usize = (BLOCK_SIDE * BLOCK_SIDE * BLOCK_SIDE) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    /// Truncation distance; `None` means four voxels.
    pub truncation: Option<f64>,
    pub max_weight: f64,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        TsdfConfig {
            voxel_size: 0.02,
            truncation: None,
            max_weight: 64.0,
        }
    }
}

impl TsdfConfig {
    pub fn truncation(&self) -> f64 {
        self.truncation.unwrap_or(4.0 * self.voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.truncation();
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite() && t > 0.0 && t.is_finite() && self.max_weight >= 1.0) {
            return Err(Error::Config(format!("invalid TSDF settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub sdf: f64,
    pub weight: f64,
    pub color: [f64; 3],
    pub votes: [u32; CLASS_COUNT],
    /// Running mean of the variance of contributing pixels that had one.
    pub variance: f64,
    pub variance_count: u32,
}

impl Default for Voxel {
    fn default() -> Self {
        Voxel {
            sdf: 0.0,
            weight: 0.0,
            color: [0.0; 3],
            votes: [0; CLASS_COUNT],
            variance: 0.0,
            variance_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub voxels: Vec<Voxel>,
}

impl Default for Block {
    fn default() -> Self {
        Block {
            voxels: vec![Voxel::default(); BLOCK_VOXELS],
        }
    }
}

/// Voxel `g` has its centre at `g · voxel_size`; blocks group 8³ voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_weight: f64,
    pub blocks: HashMap<[i32; 3], Block>,
}

/// One frame handed to [`TsdfVolume::integrate_frame`].
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub frame: &'a Frame,
    pub depth: &'a DepthMap,
    /// Pixels excluded from fusion are false; `None` keeps every pixel.
    pub keep: Option<&'a BoolGrid>,
    pub labels: Option<&'a LabelMap>,
    pub uncertainty: Option<&'a UncertaintyMap>,
    pub camera_to_world: &'a PoseSE3,
    pub k: &'a CameraIntrinsics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub fused_pixels: usize,
    pub rejected_pixels: usize,
    pub touched_blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
    pub class_id: u8,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticPointCloud {
    pub points: Vec<CloudPoint>,
}

impl SemanticPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &PoseSE3) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| CloudPoint {
                position: pose.transform_point(&Vector3::from(p.position)).into(),
                ..*p
            })
            .collect();
        SemanticPointCloud { points }
    }
}

fn local_index(l: [i32; 3]) -> usize {
    ((l[2] * BLOCK_SIDE + l[1]) * BLOCK_SIDE + l[0]) as usize
}

fn split(g: [i32; 3]) -> ([i32; 3], usize) {
    let key = g.map(|c| c.div_euclid(BLOCK_SIDE));
    (key, local_index(g.map(|c| c.rem_euclid(BLOCK_SIDE))))
}

impl TsdfVolume {
    pub fn new(config: &TsdfConfig) -> Result<Self> {
        config.validate()?;
        Ok(TsdfVolume {
            voxel_size: config.voxel_size,
            truncation: config.truncation(),
            max_weight: config.max_weight,
            blocks: HashMap::new(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn voxel(&self, g: [i32; 3]) -> Option<&Voxel> {
        let (key, i) = split(g);
        self.blocks.get(&key).map(|b| &b.voxels[i])
    }

    pub fn voxel_centre(&self, g: [i32; 3]) -> Vector3<f64> {
        Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64) * self.voxel_size
    }

    fn block_of(&self, p: &Vector3<f64>) -> [i32; 3] {
        let g = [p.x, p.y, p.z].map(|c| (c / self.voxel_size).round() as i32);
        split(g).0
    }

    /// Projective TSDF update from one view. Blocks within the truncation
    /// band of any kept pixel are allocated, then each of their voxels is
    /// projected into the image and averaged with `min(truncation, d − z)`
    /// when that is not more than a truncation behind the surface.
    pub fn integrate_frame(&mut self, obs: &Observation) -> Result<IntegrationStats> {
        let k = obs.k;
        let (w, h) = k.dims();
        check_dims((w, h), obs.frame.dims())?;
        check_dims((w, h), obs.depth.dims())?;
        if let Some(m) = obs.keep {
            check_dims((w, h), (m.width, m.height))?;
        }
        if let Some(l) = obs.labels {
            check_dims((w, h), l.dims())?;
        }
        if let Some(u) = obs.uncertainty {
            check_dims((w, h), u.dims())?;
        }
        if !obs.camera_to_world.is_valid() {
            return Err(Error::Pose(format!("invalid camera pose {:?}", obs.camera_to_world)));
        }
        let pose = obs.camera_to_world;
        let trunc = self.truncation;
        let mut stats = IntegrationStats::default();
        let mut usable = vec![false; w * h];
        let mut keys = BTreeSet::new();
        for i in 0..w * h {
            if obs.keep.is_some_and(|m| !m.data[i]) {
                continue;
            }
            let d = obs.depth.values[i];
            if !d.is_finite() {
                stats.rejected_pixels += 1;
                continue;
            }
            if !obs.depth.valid[i] {
                continue;
            }
            usable[i] = true;
            stats.fused_pixels += 1;
            let ray = k.ray((i % w) as f64, (i / w) as f64);
            let dz = 0.5 * self.voxel_size / ray.norm();
            let mut z = (d - trunc).max(dz);
            while z <= d + trunc + dz {
                keys.insert(self.block_of(&pose.transform_point(&(ray * z))));
                z += dz;
            }
        }
        stats.touched_blocks = keys.len();
        let mut work: Vec<([i32; 3], Block)> = keys
            .into_iter()
            .map(|key| (key, self.blocks.remove(&key).unwrap_or_default()))
            .collect();
        let world_to_camera = pose.inverse();
        let voxel_size = self.voxel_size;
        let max_weight = self.max_weight;
        work.par_iter_mut().for_each(|(key, block)| {
            for (li, vox) in block.voxels.iter_mut().enumerate() {
                let l = [li as i32 % BLOCK_SIDE, li as i32 / BLOCK_SIDE % BLOCK_SIDE, li as i32 / (BLOCK_SIDE * BLOCK_SIDE)];
                let g: [i32; 3] = std::array::from_fn(|a| key[a] * BLOCK_SIDE + l[a]);
                let centre = Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64) * voxel_size;
                let pc = world_to_camera.transform_point(&centre);
                let pr = k.project(&pc);
                if !pr.in_front {
                    continue;
                }
                let (u, v) = (pr.u.round(), pr.v.round());
                if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                    continue;
                }
                let i = v as usize * w + u as usize;
                if !usable[i] {
                    continue;
                }
                let observed = obs.depth.values[i] - pc.z;
                if observed < -trunc {
                    continue;
                }
                let sdf = observed.min(trunc);
                let wt = vox.weight;
                vox.sdf = (wt * vox.sdf + sdf) / (wt + 1.0);
                let c = obs.frame.pixels[i];
                vox.color = std::array::from_fn(|ch| (wt * vox.color[ch] + c[ch]) / (wt + 1.0));
                vox.weight = (wt + 1.0).min(max_weight);
                if let Some(l) = obs.labels {
                    let class = l.labels[i];
                    if (class as usize) < CLASS_COUNT {
                        vox.votes[class as usize] += 1;
                    }
                }
                if let Some(var) = obs.uncertainty.and_then(|u| u.get(i)) {
                    let n = vox.variance_count as f64;
                    vox.variance = (n * vox.variance + var) / (n + 1.0);
                    vox.variance_count += 1;
                }
            }
        });
        self.blocks.extend(work);
        Ok(stats)
    }

    /// One point per sign change of the SDF along a voxel-grid edge whose
    /// endpoints both carry weight ≥ `min_weight`. Edges touching a clamped
    /// (±truncation) value are not surface crossings and are skipped.
    pub fn extract_point_cloud(&self, min_weight: f64) -> SemanticPointCloud {
        let mut keys: Vec<&[i32; 3]> = self.blocks.keys().collect();
        keys.sort();
        let per_block: Vec<Vec<CloudPoint>> = keys
            .par_iter()
            .map(|key| {
                let mut out = Vec::new();
                let block = &self.blocks[*key];
                for (li, a) in block.voxels.iter().enumerate() {
                    if a.weight < min_weight.max(f64::MIN_POSITIVE) || a.sdf.abs() >= self.truncation {
                        continue;
                    }
                    let l = [li as i32 % BLOCK_SIDE, li as i32 / BLOCK_SIDE % BLOCK_SIDE, li as i32 / (BLOCK_SIDE * BLOCK_SIDE)];
                    let g: [i32; 3] = std::array::from_fn(|ax| key[ax] * BLOCK_SIDE + l[ax]);
                    for axis in 0..3 {
                        let mut gn = g;
                        gn[axis] += 1;
                        let Some(b) = self.voxel(gn) else { continue };
                        if b.weight < min_weight.max(f64::MIN_POSITIVE) || b.sdf.abs() >= self.truncation {
                            continue;
                        }
                        if (a.sdf >= 0.0) == (b.sdf >= 0.0) {
                            continue;
                        }
                        let t = a.sdf / (a.sdf - b.sdf);
                        let pa = self.voxel_centre(g);
                        let pb = self.voxel_centre(gn);
                        let p = pa + (pb - pa) * t;
                        let color = std::array::from_fn(|c| crate::io::to_u8(a.color[c] + (b.color[c] - a.color[c]) * t));
                        let mut votes = [0u64; CLASS_COUNT];
                        for (c, v) in votes.iter_mut().enumerate() {
                            *v = a.votes[c] as u64 + b.votes[c] as u64;
                        }
                        let class_id = argmax_votes(&votes);
                        let uncertainty = match (a.variance_count > 0, b.variance_count > 0) {
                            (true, true) => a.variance + (b.variance - a.variance) * t,
                            (true, false) => a.variance,
                            (false, true) => b.variance,
                            (false, false) => f64::INFINITY,
                        };
                        out.push(CloudPoint {
                            position: p.into(),
                            color,
                            class_id,
                            uncertainty,
                        });
                    }
                }
                out
            })
            .collect();
        SemanticPointCloud {
            points: per_block.into_iter().flatten().collect(),
        }
    }
}

/// Most-voted class, lower id on ties; [`UNLABELED`] without votes.
pub fn argmax_votes(votes: &[u64]) -> u8 {
    let mut best = None;
    for (c, &v) in votes.iter().enumerate() {
        if v > 0 && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((c, v));
        }
    }
    best.map_or(UNLABELED, |(c, _)| c as u8)
}

/// Drops the `⌈fraction·N⌉` most uncertain points (NaN counts as most
/// uncertain; among equals the higher index goes first).
pub fn point_uncertainty_filter(cloud: &SemanticPointCloud, fraction: f64) -> Result<SemanticPointCloud> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("filter fraction {fraction} outside [0, 1)")));
    }
    let n = cloud.len();
    let remove = filter_count(fraction, n);
    let key = |i: usize| {
        let u = cloud.points[i].uncertainty;
        if u.is_nan() { f64::INFINITY } else { u }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(b.cmp(&a)));
    let mut drop = vec![false; n];
    for &i in &order[..remove] {
        drop[i] = true;
    }
    Ok(SemanticPointCloud {
        points: cloud.points.iter().zip(&drop).filter(|(_, d)| !**d).map(|(p, _)| *p).collect(),
    })
}
