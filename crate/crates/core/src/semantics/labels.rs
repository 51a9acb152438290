use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use super::{ClassTaxonomy, UNLABELED};
use crate::geometry::BoolGrid;
use crate::{Error, Result};

const PROBABILITY_MAGIC: &[u8; 4] = b"PRB1";

/// Per-pixel class probabilities, row-major with the class index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ProbabilityGrid {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * classes || classes == 0 {
            return Err(Error::Parameter(format!(
                "probability grid {width}x{height}x{classes} needs {} values, got {}",
                width * height * classes,
                data.len()
            )));
        }
        Ok(ProbabilityGrid {
            width,
            height,
            classes,
            data,
        })
    }

    /// One-hot grid of a label map (unlabeled pixels get a uniform row).
    pub fn one_hot(labels: &LabelMap, classes: usize) -> Self {
        let mut data = vec![0.0; labels.labels.len() * classes];
        for (i, &l) in labels.labels.iter().enumerate() {
            if (l as usize) < classes {
                data[i * classes + l as usize] = 1.0;
            } else {
                data[i * classes..(i + 1) * classes].fill(1.0 / classes as f32);
            }
        }
        ProbabilityGrid {
            width: labels.width,
            height: labels.height,
            classes,
            data,
        }
    }

    pub fn row(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.classes..(pixel + 1) * self.classes]
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        (0..self.width * self.height)
            .map(|p| (self.row(p).iter().map(|v| *v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Hard labels, ties to the lower class id.
    pub fn argmax(&self) -> LabelMap {
        let labels = (0..self.width * self.height).map(|p| argmax(self.row(p)) as u8).collect();
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
            probabilities: None,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(PROBABILITY_MAGIC)?;
        for d in [self.height, self.width, self.classes] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read, path: &Path) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
        if &header[..4] != PROBABILITY_MAGIC {
            return Err(Error::format(path, "missing probability grid magic"));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (height, width, classes) = (dim(0), dim(1), dim(2));
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(classes))
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != n * 4 {
            return Err(Error::format(path, format!("expected {} payload bytes, found {}", n * 4, bytes.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        ProbabilityGrid::new(width, height, classes, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f), path)
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Class id per pixel, optionally with the probabilities it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub probabilities: Option<ProbabilityGrid>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape {
                expected: (width, height),
                found: (labels.len(), 1),
            });
        }
        Ok(LabelMap {
            width,
            height,
            labels,
            probabilities: None,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![label; width * height],
            probabilities: None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Checks every id against the taxonomy (the unlabeled sentinel is allowed).
    pub fn validate(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        if let Some(bad) = self.labels.iter().find(|&&l| l != UNLABELED && l as usize >= taxonomy.len()) {
            return Err(Error::Taxonomy(format!("label {bad} outside the taxonomy")));
        }
        if let Some(p) = &self.probabilities {
            let err = p.max_row_error();
            if err > 1e-6 {
                return Err(Error::Taxonomy(format!("probability rows deviate from 1 by {err}")));
            }
        }
        Ok(())
    }

    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            if (l as usize) < classes {
                h[l as usize] += 1;
            }
        }
        h
    }
}

/// Keep-mask that is false exactly on pixels whose label is unwanted.
pub fn mask_unwanted(labels: &LabelMap, unwanted: &BTreeSet<u8>, taxonomy: &ClassTaxonomy) -> Result<BoolGrid> {
    if let Some(bad) = unwanted.iter().find(|&&c| c as usize >= taxonomy.len()) {
        return Err(Error::Taxonomy(format!("unwanted class {bad} outside the taxonomy")));
    }
    Ok(BoolGrid {
        width: labels.width,
        height: labels.height,
        data: labels.labels.iter().map(|l| !unwanted.contains(l)).collect(),
    })
}

/// Relabels every pixel through `grouping`; unlabeled pixels stay unlabeled.
pub fn group_classes(labels: &LabelMap, grouping: &BTreeMap<u8, u8>) -> Result<LabelMap> {
    let out = labels
        .labels
        .iter()
        .map(|&l| {
            if l == UNLABELED {
                return Ok(l);
            }
            grouping
                .get(&l)
                .copied()
                .ok_or_else(|| Error::Grouping(format!("no group for class {l}")))
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(LabelMap {
        width: labels.width,
        height: labels.height,
        labels: out,
        probabilities: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_examples() {
        let t = ClassTaxonomy::default();
        let bg = t.id("background").unwrap();
        let all_bg = LabelMap::filled(4, 4, bg);
        assert_eq!(mask_unwanted(&all_bg, &BTreeSet::new(), &t).unwrap().count(), 16);
        assert_eq!(mask_unwanted(&all_bg, &BTreeSet::from([bg]), &t).unwrap().count(), 0);
        let mixed = LabelMap::new(10, 1, vec![bg, bg, bg, 5, 5, 5, 5, 6, 6, 1]).unwrap();
        assert_eq!(mask_unwanted(&mixed, &BTreeSet::from([bg]), &t).unwrap().count(), 7);
        assert!(mask_unwanted(&mixed, &BTreeSet::from([40]), &t).is_err());
    }

    #[test]
    fn grouping_relabels_and_conserves_mass() {
        let t = ClassTaxonomy::default();
        let g = t.grouping("substrate").unwrap().as_map();
        let rubble = LabelMap::filled(3, 3, t.id("rubble").unwrap());
        let out = group_classes(&rubble, &g).unwrap();
        let sub = g[&t.id("sand").unwrap()];
        assert!(out.labels.iter().all(|l| *l == sub));
        let id = t.identity_grouping().as_map();
        let mixed = LabelMap::new(4, 1, vec![1, 5, UNLABELED, 19]).unwrap();
        assert_eq!(group_classes(&mixed, &id).unwrap().labels, mixed.labels);
        let mut partial = g.clone();
        partial.remove(&19);
        assert!(matches!(group_classes(&mixed, &partial), Err(Error::Grouping(_))));
    }

    #[test]
    fn probability_grid_round_trip() {
        let p = ProbabilityGrid::new(2, 1, 3, vec![0.2, 0.5, 0.3, 0.4, 0.4, 0.2]).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PRB1");
        let q = ProbabilityGrid::read_from(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.argmax().labels, vec![1, 0]);
    }
}
