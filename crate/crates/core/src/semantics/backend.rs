use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::argmax;
use super::tiling::resize_probabilities;
use super::{stitch_predictions, tile_placements, ClassTaxonomy, LabelMap, ProbabilityGrid, TilingConfig, UNLABELED};
use crate::geometry::Frame;
use crate::{Error, Result};

/// Per-frame semantic segmentation.
pub trait Segmenter: Sync {
    fn segment(&self, index: usize, frame: &Frame) -> Result<LabelMap>;
}

/// Probability that a pixel of class `truth` is reported as `predicted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionEntry {
    pub truth: String,
    pub predicted: String,
    pub probability: f64,
}

/// Off-diagonal confusion probabilities; the remaining mass of every row
/// stays on the true class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionKernel {
    #[serde(default)]
    pub entries: Vec<ConfusionEntry>,
}

impl ConfusionKernel {
    /// Row-stochastic matrix `[truth][predicted]`.
    pub fn matrix(&self, taxonomy: &ClassTaxonomy) -> Result<Vec<Vec<f64>>> {
        let n = taxonomy.len();
        let mut m = vec![vec![0.0; n]; n];
        for e in &self.entries {
            let (t, p) = (taxonomy.id(&e.truth)? as usize, taxonomy.id(&e.predicted)? as usize);
            if !(0.0..=1.0).contains(&e.probability) || t == p {
                return Err(Error::Config(format!(
                    "confusion entry {} -> {} with probability {} is invalid",
                    e.truth, e.predicted, e.probability
                )));
            }
            m[t][p] += e.probability;
        }
        for (t, row) in m.iter_mut().enumerate() {
            let off: f64 = row.iter().sum();
            if off > 1.0 + 1e-12 {
                return Err(Error::Config(format!("confusion row {t} sums to {off}")));
            }
            row[t] = (1.0 - off).max(0.0);
        }
        Ok(m)
    }
}

/// Serves ground-truth labels, optionally corrupted by a confusion kernel
/// with a per-frame random stream.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    pub truth: Vec<LabelMap>,
    /// Row-stochastic `[truth][predicted]`, `None` for noise-free labels.
    pub kernel: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, index: usize, frame: &Frame) -> Result<LabelMap> {
        let truth = self
            .truth
            .get(index)
            .ok_or_else(|| Error::Parameter(format!("no ground-truth labels for frame {index}")))?;
        if truth.dims() != frame.dims() {
            return Err(Error::Shape {
                expected: frame.dims(),
                found: truth.dims(),
            });
        }
        let Some(kernel) = &self.kernel else {
            return Ok(truth.clone());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let labels = truth
            .labels
            .iter()
            .map(|&t| {
                let u: f64 = rng.random();
                if t == UNLABELED || t as usize >= kernel.len() {
                    return t;
                }
                let row = &kernel[t as usize];
                let mut acc = 0.0;
                for (p, prob) in row.iter().enumerate() {
                    acc += prob;
                    if u < acc {
                        return p as u8;
                    }
                }
                t
            })
            .collect();
        LabelMap::new(truth.width, truth.height, labels)
    }
}

/// Reads precomputed probabilities: `<dir>/<index:06>.prb` holds a whole
/// frame; otherwise `<dir>/<index:06>/patch_<k:02>.prb` hold the patches of
/// the frame's tiling in placement order, which are stitched.
#[derive(Debug, Clone)]
pub struct ExternalSegmenter {
    pub dir: PathBuf,
    pub tiling: TilingConfig,
}

impl Segmenter for ExternalSegmenter {
    fn segment(&self, index: usize, frame: &Frame) -> Result<LabelMap> {
        let whole = self.dir.join(format!("{index:06}.prb"));
        let grid = if whole.exists() {
            ProbabilityGrid::load(&whole)?
        } else {
            let patch_dir = self.dir.join(format!("{index:06}"));
            let t = &self.tiling;
            let placements = tile_placements(frame.width, frame.height, t.patch_width, t.patch_height)?;
            let patches = placements
                .into_iter()
                .enumerate()
                .map(|(k, pl)| Ok((pl, ProbabilityGrid::load(&patch_dir.join(format!("patch_{k:02}.prb")))?)))
                .collect::<Result<Vec<_>>>()?;
            let stitched = stitch_predictions(&patches, frame.width, frame.height)?;
            stitched.probabilities.expect("stitch keeps probabilities")
        };
        let (w, h) = frame.dims();
        let data: Vec<f64> = resize_probabilities(&grid, w, h);
        let c = grid.classes;
        let labels = (0..w * h).map(|p| argmax(&data[p * c..(p + 1) * c]) as u8).collect();
        let mut out = LabelMap::new(w, h, labels)?;
        out.probabilities = Some(ProbabilityGrid::new(w, h, c, data.iter().map(|v| *v as f32).collect())?);
        Ok(out)
    }
}
