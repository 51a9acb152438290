use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EstimatorParameters, WINDOW_SPAN};
use crate::geometry::{check_dims, CameraIntrinsics, Frame};
use crate::objective::{LossBreakdown, LossWeights, PairProblem};
use crate::{Error, Result};

/// Halvings tried by the step-size safeguard before a step is rejected.
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: usize,
    /// Adam step size for the raw depth grids.
    pub learning_rate: f64,
    /// Adam step size for pose parameters; `learning_rate` when absent.
    pub pose_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pairs sampled per step; 0 uses every pair.
    pub batch_pairs: usize,
    /// Sample stride-2 pairs in addition to adjacent ones.
    pub stride_two: bool,
    pub coarse_width: usize,
    pub coarse_height: usize,
    pub initial_depth: f64,
    /// Halve (and finally reject) steps that increase the batch loss.
    pub safeguard: bool,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            learning_rate: 1e-4,
            pose_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_pairs: 5,
            stride_two: true,
            coarse_width: 19,
            coarse_height: 11,
            initial_depth: 2.0,
            safeguard: true,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.epsilon, self.initial_depth];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || self.pose_learning_rate.is_some_and(|v| !(v > 0.0 && v.is_finite()))
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.coarse_width < 2
            || self.coarse_height < 2
        {
            return Err(Error::Config(format!("invalid fit settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub parameters: EstimatorParameters,
    /// Batch loss after each step (before the step when it was rejected).
    pub loss_trace: Vec<f64>,
    pub best_so_far: Vec<f64>,
    pub rejected_steps: usize,
}

/// Frame pairs used by the objective: adjacent, then stride two.
pub(crate) fn pair_list(n: usize, stride_two: bool) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if stride_two {
        pairs.extend((0..n.saturating_sub(2)).map(|i| (i, i + 2)));
    }
    pairs
}

struct Layout {
    frames: usize,
    grid: usize,
}

impl Layout {
    fn depth(&self, frame: usize) -> usize {
        frame * self.grid
    }

    fn pose(&self, pair: usize) -> usize {
        self.frames * self.grid + 6 * pair
    }

    fn len(&self) -> usize {
        self.pose(self.frames - 1)
    }

    /// Global indices of a pair problem's parameter vector.
    fn indices(&self, a: usize, b: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (self.depth(a)..self.depth(a) + self.grid).collect();
        idx.extend(self.depth(b)..self.depth(b) + self.grid);
        for p in a..b {
            idx.extend(self.pose(p)..self.pose(p) + 6);
        }
        idx
    }
}

fn unflatten(flat: &[f64], template: &EstimatorParameters, layout: &Layout) -> EstimatorParameters {
    let mut p = template.clone();
    for (f, raw) in p.depth_raw.iter_mut().enumerate() {
        raw.copy_from_slice(&flat[layout.depth(f)..layout.depth(f) + layout.grid]);
    }
    for (i, pose) in p.pair_params.iter_mut().enumerate() {
        pose.copy_from_slice(&flat[layout.pose(i)..layout.pose(i) + 6]);
    }
    p
}

struct Context<'a> {
    frames: &'a [Frame],
    k: CameraIntrinsics,
    weights: LossWeights,
    template: &'a EstimatorParameters,
    layout: Layout,
}

impl Context<'_> {
    fn problem(&self, a: usize, b: usize) -> PairProblem<'_> {
        let mut p = PairProblem::new(&self.frames[a], &self.frames[b], self.k, self.template.decoder(), b - a);
        p.weights = self.weights;
        p
    }

    fn pair_loss(&self, flat: &[f64], (a, b): (usize, usize)) -> Result<LossBreakdown> {
        let theta: Vec<f64> = self.layout.indices(a, b).iter().map(|&i| flat[i]).collect();
        Ok(self.problem(a, b).evaluate(&theta)?.0)
    }

    fn batch_loss(&self, flat: &[f64], batch: &[(usize, usize)]) -> Result<f64> {
        let losses: Vec<Result<LossBreakdown>> = batch.par_iter().map(|&p| self.pair_loss(flat, p)).collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?.total;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Mean batch loss and its gradient, reduced in batch order.
    fn batch_gradient(&self, flat: &[f64], batch: &[(usize, usize)]) -> Result<(f64, Vec<f64>)> {
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|&(a, b)| {
                let theta: Vec<f64> = self.layout.indices(a, b).iter().map(|&i| flat[i]).collect();
                let (loss, g, _) = self.problem(a, b).gradient(&theta)?;
                Ok((loss.total, g))
            })
            .collect();
        let inv = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; flat.len()];
        let mut loss = 0.0;
        for (part, &(a, b)) in parts.into_iter().zip(batch) {
            let (l, g) = part?;
            loss += l * inv;
            for (gi, &i) in g.iter().zip(&self.layout.indices(a, b)) {
                grad[i] += gi * inv;
            }
        }
        Ok((loss, grad))
    }
}

fn check_frames(frames: &[Frame], k: &CameraIntrinsics) -> Result<()> {
    if frames.len() < WINDOW_SPAN {
        return Err(Error::Window(format!(
            "fitting needs at least {WINDOW_SPAN} frames, got {}",
            frames.len()
        )));
    }
    for f in frames {
        check_dims(k.dims(), f.dims())?;
    }
    Ok(())
}

/// Fits per-frame depth grids and adjacent poses to a sequence by Adam on
/// the mean pair objective, starting from constant depth and identity poses.
pub fn fit_self_supervised(frames: &[Frame], k: &CameraIntrinsics, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    check_frames(frames, k)?;
    let init = EstimatorParameters::initial(
        frames.len(),
        k,
        (config.coarse_width, config.coarse_height),
        config.initial_depth,
    )?;
    fit_with_init(frames, k, config, init)
}

/// As [`fit_self_supervised`] from given parameters (the coarse grid size
/// of `init` takes precedence over the config).
pub fn fit_with_init(
    frames: &[Frame],
    k: &CameraIntrinsics,
    config: &FitConfig,
    init: EstimatorParameters,
) -> Result<FitReport> {
    config.validate()?;
    check_frames(frames, k)?;
    if init.frame_count() != frames.len() || init.width != k.width || init.height != k.height {
        return Err(Error::Parameter("initial parameters do not match the sequence".into()));
    }
    let layout = Layout {
        frames: frames.len(),
        grid: init.coarse_width * init.coarse_height,
    };
    let ctx = Context {
        frames,
        k: *k,
        weights: config.weights,
        template: &init,
        layout,
    };
    let layout = &ctx.layout;
    let pairs = pair_list(frames.len(), config.stride_two);
    let batch_size = if config.batch_pairs == 0 {
        pairs.len()
    } else {
        config.batch_pairs.min(pairs.len())
    };
    let pose_lr = config.pose_learning_rate.unwrap_or(config.learning_rate);
    let pose_start = layout.pose(0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut flat = init.flat();
    let n = layout.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = vec![0u32; n];
    let mut touched = vec![false; n];
    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut best_so_far = Vec::with_capacity(config.steps);
    let mut rejected_steps = 0;

    for step in 0..config.steps {
        let wrap = |e: Error| match e {
            Error::NonFinite { term } => Error::Optimization {
                step,
                detail: format!("non-finite {term}"),
            },
            other => Error::Optimization {
                step,
                detail: other.to_string(),
            },
        };
        let batch: Vec<(usize, usize)> = if batch_size == pairs.len() {
            pairs.clone()
        } else {
            let mut idx = sample(&mut rng, pairs.len(), batch_size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i]).collect()
        };
        let (loss, grad) = ctx.batch_gradient(&flat, &batch).map_err(wrap)?;
        if !loss.is_finite() {
            return Err(wrap(Error::NonFinite { term: "total" }));
        }

        touched.iter_mut().for_each(|x| *x = false);
        for &(a, b) in &batch {
            for i in layout.indices(a, b) {
                touched[i] = true;
            }
        }
        let mut delta = vec![0.0; n];
        for i in (0..n).filter(|&i| touched[i]) {
            t[i] += 1;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - config.beta1.powi(t[i] as i32));
            let v_hat = v[i] / (1.0 - config.beta2.powi(t[i] as i32));
            let lr = if i >= pose_start { pose_lr } else { config.learning_rate };
            delta[i] = -lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = flat.iter().zip(&delta).map(|(x, d)| x + scale * d).collect();
            if !config.safeguard {
                accepted = Some((trial, f64::NAN));
                break;
            }
            match ctx.batch_loss(&trial, &batch) {
                Ok(l) if l.is_finite() && l <= loss => {
                    accepted = Some((trial, l));
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        let after = match accepted {
            Some((trial, l)) => {
                flat = trial;
                if l.is_nan() {
                    ctx.batch_loss(&flat, &batch).map_err(wrap)?
                } else {
                    l
                }
            }
            None => {
                rejected_steps += 1;
                loss
            }
        };
        if !after.is_finite() {
            return Err(wrap(Error::NonFinite { term: "total" }));
        }
        loss_trace.push(after);
        let best = best_so_far.last().map_or(after, |b: &f64| b.min(after));
        best_so_far.push(best);
    }

    Ok(FitReport {
        parameters: unflatten(&flat, &init, layout),
        loss_trace,
        best_so_far,
        rejected_steps,
    })
}

/// Pair objective for every adjacent and stride-two pair of a sequence.
pub fn sequence_losses(
    frames: &[Frame],
    k: &CameraIntrinsics,
    params: &EstimatorParameters,
    weights: &LossWeights,
) -> Result<Vec<((usize, usize), LossBreakdown)>> {
    let layout = Layout {
        frames: frames.len(),
        grid: params.coarse_width * params.coarse_height,
    };
    let ctx = Context {
        frames,
        k: *k,
        weights: *weights,
        template: params,
        layout,
    };
    let flat = params.flat();
    pair_list(frames.len(), true)
        .into_par_iter()
        .map(|p| Ok((p, ctx.pair_loss(&flat, p)?)))
        .collect()
}
