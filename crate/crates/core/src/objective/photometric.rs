use super::{AdjointFaults, DIVISION_EPS, SSIM_C1, SSIM_C2};
use crate::{Error, Result};

pub(crate) struct PhotometricEval {
    pub value: f64,
    pub signs: Vec<[i8; 3]>,
    /// d value / d synthesized pixel, per channel.
    pub grad: Option<Vec<[f64; 3]>>,
}

#[inline]
fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Photometric term between `target` (fixed) and `synth` on `mask`.
///
/// When `frozen_signs` is given the L1 part is evaluated as `s·(x − y)` with
/// the recorded signs, i.e. on the smooth piece active at recording time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate(
    target: &[[f64; 3]],
    synth: &[[f64; 3]],
    mask: &[bool],
    width: usize,
    height: usize,
    alpha: f64,
    frozen_signs: Option<&[[i8; 3]]>,
    want_grad: bool,
    faults: AdjointFaults,
) -> Result<PhotometricEval> {
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::Degenerate("photometric loss over an empty mask".into()));
    }
    let inv_count = 1.0 / count as f64;
    let mut signs = vec![[0i8; 3]; width * height];
    let mut grad = want_grad.then(|| vec![[0.0; 3]; width * height]);
    let ssim_scale = alpha / 2.0 / 3.0 * inv_count;
    let l1_scale = (1.0 - alpha) / 3.0 * inv_count;
    let mut total = 0.0;
    let mut window = [0usize; 9];

    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            if !mask[p] {
                continue;
            }
            let mut n = 0;
            for wy in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                for wx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    let q = wy * width + wx;
                    if mask[q] {
                        window[n] = q;
                        n += 1;
                    }
                }
            }
            let inv_n = 1.0 / n as f64;
            let mut pixel = 0.0;
            for c in 0..3 {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for &q in &window[..n] {
                    let (a, b) = (target[q][c], synth[q][c]);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
                let mx = sx * inv_n;
                let my = sy * inv_n;
                let vxx = sxx * inv_n - mx * mx;
                let vyy = syy * inv_n - my * my;
                let vxy = sxy * inv_n - mx * my;
                let a1 = 2.0 * mx * my + SSIM_C1;
                let a2 = 2.0 * vxy + SSIM_C2;
                let b1 = mx * mx + my * my + SSIM_C1;
                let b2 = vxx + vyy + SSIM_C2;
                let num = a1 * a2 + DIVISION_EPS;
                let den = b1 * b2 + DIVISION_EPS;
                let ssim = num / den;

                let diff = target[p][c] - synth[p][c];
                let s = match frozen_signs {
                    Some(f) => f[p][c],
                    None => sign(diff),
                };
                signs[p][c] = s;
                pixel += alpha * (1.0 - ssim) / 2.0 + (1.0 - alpha) * (s as f64 * diff);

                if let Some(g) = grad.as_mut() {
                    let mut g_ssim = -ssim_scale;
                    if faults.flip_ssim {
                        g_ssim = -g_ssim;
                    }
                    let inv_den = 1.0 / den;
                    let d_my = (2.0 * mx * a2) * inv_den - num * (2.0 * my * b2) * inv_den * inv_den;
                    let d_vyy = -num * b1 * inv_den * inv_den;
                    let d_vxy = 2.0 * a1 * inv_den;
                    for &q in &window[..n] {
                        let dq = inv_n * (d_my + d_vyy * 2.0 * (synth[q][c] - my) + d_vxy * (target[q][c] - mx));
                        g[q][c] += g_ssim * dq;
                    }
                    let mut g_l1 = -(s as f64) * l1_scale;
                    if faults.flip_l1 {
                        g_l1 = -g_l1;
                    }
                    g[p][c] += g_l1;
                }
            }
            total += pixel / 3.0;
        }
    }
    Ok(PhotometricEval {
        value: total * inv_count,
        signs,
        grad,
    })
}
