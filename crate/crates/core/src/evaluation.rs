//! Marker-distance accuracy and semantic confusion metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::SemanticPointCloud;
use crate::geometry::{BilinearSample, CameraIntrinsics, DepthMap, PoseSE3};
use crate::io::write_rgb_png;
use crate::semantics::{Grouping, LabelMap, UNLABELED};
use crate::synth::MarkerPair;
use crate::{Error, Result};

/// `mean(truth) / mean(estimated)`.
pub fn scale_factor(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.is_empty() || estimated.len() != truth.len() {
        return Err(Error::Degenerate(format!(
            "need matching non-empty distance lists, got {} and {}",
            estimated.len(),
            truth.len()
        )));
    }
    let me: f64 = estimated.iter().sum::<f64>() / estimated.len() as f64;
    let mt: f64 = truth.iter().sum::<f64>() / truth.len() as f64;
    if me == 0.0 || !me.is_finite() {
        return Err(Error::Degenerate(format!("mean estimated distance is {me}")));
    }
    Ok(mt / me)
}

/// Scales estimates so their mean equals the mean of the ground truth.
pub fn scale_normalize(estimated: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    let s = scale_factor(estimated, truth)?;
    Ok(estimated.iter().map(|d| s * d).collect())
}

pub fn mean_abs_rel_error(scaled: &[f64], truth: &[f64]) -> Result<f64> {
    if truth.is_empty() || scaled.len() != truth.len() {
        return Err(Error::Degenerate("no distance pairs to compare".into()));
    }
    if let Some(d) = truth.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::Parameter(format!("ground-truth distance {d} must be positive")));
    }
    Ok(scaled.iter().zip(truth).map(|(e, t)| (t - e).abs() / t).sum::<f64>() / truth.len() as f64)
}

/// Measured marker pairs and marker positions located in a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub pairs: Vec<MarkerPair>,
    pub estimated: BTreeMap<usize, [f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: usize,
    pub b: usize,
    pub truth: f64,
    pub estimated: f64,
    pub scaled: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerReport {
    pub scale: f64,
    pub mare: f64,
    pub pairs: Vec<PairResult>,
    /// Pairs skipped because a marker could not be located.
    pub unmatched: Vec<(usize, usize)>,
}

impl MarkerSet {
    pub fn evaluate(&self) -> Result<MarkerReport> {
        let mut used = Vec::new();
        let mut unmatched = Vec::new();
        for p in &self.pairs {
            if !(p.distance > 0.0) {
                return Err(Error::Parameter(format!("marker distance {} must be positive", p.distance)));
            }
            match (self.estimated.get(&p.a), self.estimated.get(&p.b)) {
                (Some(a), Some(b)) => used.push((p, (Vector3::from(*a) - Vector3::from(*b)).norm())),
                _ => unmatched.push((p.a, p.b)),
            }
        }
        let est: Vec<f64> = used.iter().map(|u| u.1).collect();
        let truth: Vec<f64> = used.iter().map(|u| u.0.distance).collect();
        let scale = scale_factor(&est, &truth)?;
        let scaled: Vec<f64> = est.iter().map(|d| d * scale).collect();
        let mare = mean_abs_rel_error(&scaled, &truth)?;
        let pairs = used
            .iter()
            .zip(&scaled)
            .map(|((p, e), s)| PairResult {
                a: p.a,
                b: p.b,
                truth: p.distance,
                estimated: *e,
                scaled: *s,
                relative_error: (p.distance - s).abs() / p.distance,
            })
            .collect();
        Ok(MarkerReport {
            scale,
            mare,
            pairs,
            unmatched,
        })
    }
}

/// Pixel at which a marker anchor is visible in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
}

/// Frames in which a world anchor projects at least `margin` pixels inside
/// the image and is not occluded (reference depth agrees within 2%). This
/// plays the role of picking the marker in the images.
pub fn marker_sightings(
    anchor: [f64; 3],
    camera_to_world: &[PoseSE3],
    depths: &[DepthMap],
    k: &CameraIntrinsics,
    margin: f64,
) -> Vec<Sighting> {
    let a = Vector3::from(anchor);
    let mut out = Vec::new();
    for (frame, (pose, depth)) in camera_to_world.iter().zip(depths).enumerate() {
        let pc = pose.inverse().transform_point(&a);
        let pr = k.project(&pc);
        let (w, h) = (k.width as f64, k.height as f64);
        if !pr.in_front || pr.u < margin || pr.v < margin || pr.u > w - 1.0 - margin || pr.v > h - 1.0 - margin {
            continue;
        }
        match depth.get(pr.u.round() as usize, pr.v.round() as usize) {
            Some(d) if (d - pc.z).abs() <= 0.02 * pc.z => out.push(Sighting { frame, u: pr.u, v: pr.v }),
            _ => {}
        }
    }
    out
}

/// Mean of the sightings lifted with estimated depth and moved by estimated
/// camera-to-cloud poses; `None` without any usable sighting.
pub fn backproject_sightings(
    sightings: &[Sighting],
    depths: &[DepthMap],
    camera_to_cloud: &[PoseSE3],
    k: &CameraIntrinsics,
) -> Option<[f64; 3]> {
    let mut sum = Vector3::zeros();
    let mut n = 0;
    for s in sightings {
        let (Some(d), Some(pose)) = (depths.get(s.frame), camera_to_cloud.get(s.frame)) else {
            continue;
        };
        if let Some(z) = d.bilinear_sample(s.u, s.v) {
            sum += pose.transform_point(&(k.ray(s.u, s.v) * z));
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).into())
}

/// Mean of the cloud points within `radius` of `p` (or `p` itself when
/// there are none), so that distances are measured on the cloud.
pub fn snap_to_cloud(cloud: &SemanticPointCloud, p: [f64; 3], radius: f64) -> [f64; 3] {
    let c = Vector3::from(p);
    let mut sum = Vector3::zeros();
    let mut n = 0;
    for q in &cloud.points {
        let q = Vector3::from(q.position);
        if (q - c).norm() <= radius {
            sum += q;
            n += 1;
        }
    }
    if n == 0 { p } else { (sum / n as f64).into() }
}

/// Label of each cloud point by majority over the frames that see it: the
/// point must project inside the image where the frame's depth agrees with
/// its camera z within `tolerance`. Points seen by no frame are unlabeled.
pub fn transfer_labels(
    cloud: &SemanticPointCloud,
    camera_to_cloud: &[PoseSE3],
    depths: &[DepthMap],
    labels: &[LabelMap],
    k: &CameraIntrinsics,
    tolerance: f64,
) -> Vec<u8> {
    let cloud_to_camera: Vec<PoseSE3> = camera_to_cloud.iter().map(PoseSE3::inverse).collect();
    let (w, h) = k.dims();
    cloud
        .points
        .par_iter()
        .map(|p| {
            let q = Vector3::from(p.position);
            let mut votes = [0u64; 256];
            for ((pose, depth), lab) in cloud_to_camera.iter().zip(depths).zip(labels) {
                let pc = pose.transform_point(&q);
                let pr = k.project(&pc);
                if !pr.in_front {
                    continue;
                }
                let (u, v) = (pr.u.round(), pr.v.round());
                if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                    continue;
                }
                let i = v as usize * w + u as usize;
                if depth.valid[i] && (depth.values[i] - pc.z).abs() <= tolerance {
                    votes[lab.labels[i] as usize] += 1;
                }
            }
            votes[UNLABELED as usize] = 0;
            crate::fusion::argmax_votes(&votes)
        })
        .collect()
}

/// Row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub total: f64,
    pub mean_class: f64,
    /// `None` for classes without ground-truth samples.
    pub per_class: Vec<Option<f64>>,
}

/// Counts label pairs, skipping elements where either side is unlabeled.
pub fn confusion(pred: &[u8], truth: &[u8], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            expected: (truth.len(), 1),
            found: (pred.len(), 1),
        });
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (&p, &t) in pred.iter().zip(truth) {
        if p == UNLABELED || t == UNLABELED {
            continue;
        }
        if p as usize >= classes || t as usize >= classes {
            return Err(Error::Taxonomy(format!("class id {} outside {classes} classes", p.max(t))));
        }
        m.counts[t as usize][p as usize] += 1;
    }
    Ok(m)
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Shape {
                expected: (self.classes(), self.classes()),
                found: (other.classes(), other.classes()),
            });
        }
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Merges rows and columns by a class grouping.
    pub fn grouped(&self, grouping: &Grouping) -> Result<ConfusionMatrix> {
        if grouping.map.len() < self.classes() {
            return Err(Error::Grouping(format!(
                "grouping `{}` covers {} classes, matrix has {}",
                grouping.name,
                grouping.map.len(),
                self.classes()
            )));
        }
        let mut g = ConfusionMatrix::zeros(grouping.group_count());
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                g.counts[grouping.map[t] as usize][grouping.map[p] as usize] += n;
            }
        }
        Ok(g)
    }

    pub fn accuracies(&self) -> Result<Accuracies> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Degenerate("confusion matrix is empty".into()));
        }
        let trace: u64 = (0..self.classes()).map(|c| self.counts[c][c]).sum();
        let per_class: Vec<Option<f64>> = self
            .counts
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(Accuracies {
            total: trace as f64 / total as f64,
            mean_class: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
        })
    }

    /// Row-normalized shares (rows without samples stay zero).
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
            })
            .collect()
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |c: usize| names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let mut out = String::from("truth");
        for c in 0..self.classes() {
            write!(out, ",{}", name(c)).expect("write to string");
        }
        out.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            out.push_str(&name(t));
            for n in row {
                write!(out, ",{n}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    /// Heat map of the row-normalized matrix, `cell` pixels per entry, white
    /// for 0 through dark blue for 1.
    pub fn write_heat_map(&self, path: &Path, cell: usize) -> Result<()> {
        let n = self.classes();
        let side = (n * cell).max(1);
        let shares = self.normalized();
        let mut px = vec![[255u8; 3]; side * side];
        for (t, row) in shares.iter().enumerate() {
            for (p, &s) in row.iter().enumerate() {
                let c = [255.0 - 247.0 * s, 255.0 - 207.0 * s, 255.0 - 148.0 * s].map(|v| v.round() as u8);
                for y in t * cell..(t + 1) * cell {
                    for x in p * cell..(p + 1) * cell {
                        px[y * side + x] = c;
                    }
                }
            }
        }
        write_rgb_png(path, side, side, &px)
    }
}

/// Per-class accuracy rows; absent classes print `-`.
pub fn accuracies_csv(acc: &Accuracies, names: &[String]) -> String {
    let mut out = String::from("class_id,class_name,accuracy\n");
    for (c, a) in acc.per_class.iter().enumerate() {
        let name = names.get(c).map_or("", String::as_str);
        match a {
            Some(a) => writeln!(out, "{c},{name},{a:.6}"),
            None => writeln!(out, "{c},{name},-"),
        }
        .expect("write to string");
    }
    writeln!(out, ",total,{:.6}", acc.total).expect("write to string");
    writeln!(out, ",mean_class,{:.6}", acc.mean_class).expect("write to string");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_examples() {
        assert_eq!(scale_normalize(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(scale_factor(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 0.5);
        let s = scale_factor(&[1.1, 2.2, 2.7], &[1.0, 2.0, 3.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(matches!(scale_factor(&[0.0], &[1.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mare_examples() {
        let m = mean_abs_rel_error(&[1.1, 1.8], &[1.0, 2.0]).unwrap();
        assert!((m - 0.1).abs() < 1e-12);
        assert_eq!(mean_abs_rel_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mean_abs_rel_error(&[], &[]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(m.counts, vec![vec![2, 0], vec![0, 2]]);
        let m = confusion(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![0, 1], vec![1, 0]]);
        assert!(matches!(confusion(&[3], &[0], 2), Err(Error::Taxonomy(_))));
        assert_eq!(confusion(&[UNLABELED, 1], &[0, UNLABELED], 2).unwrap().total(), 0);
    }

    #[test]
    fn accuracy_hand_case() {
        let m = ConfusionMatrix {
            counts: vec![vec![8, 2], vec![4, 6]],
        };
        let a = m.accuracies().unwrap();
        assert!((a.total - 0.7).abs() < 1e-12);
        assert_eq!(a.per_class, vec![Some(0.8), Some(0.6)]);
        assert!((a.mean_class - 0.7).abs() < 1e-12);
        let m = ConfusionMatrix {
            counts: vec![vec![3, 1, 0], vec![0, 0, 0], vec![0, 0, 2]],
        };
        let a = m.accuracies().unwrap();
        assert_eq!(a.per_class[1], None);
        assert!((a.mean_class - (0.75 + 1.0) / 2.0).abs() < 1e-12);
        assert!(ConfusionMatrix::zeros(3).accuracies().is_err());
    }
}
