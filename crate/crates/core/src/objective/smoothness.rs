use super::AdjointFaults;
use crate::geometry::{DepthMap, Frame};
use crate::{Error, Result};

pub(crate) struct SmoothEval {
    pub value: f64,
    /// Sign of `d*(x+1) − d*(x)` per horizontal edge, indexed by its left pixel.
    pub signs_x: Vec<i8>,
    /// Sign of `d*(y+1) − d*(y)` per vertical edge, indexed by its top pixel.
    pub signs_y: Vec<i8>,
    /// d value / d depth, zero at invalid pixels.
    pub grad: Option<Vec<f64>>,
}

fn edge_weight(a: [f64; 3], b: [f64; 3]) -> f64 {
    let g = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
    (-g).exp()
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Edge-aware smoothness of mean-normalized disparity.
///
/// Horizontal and vertical edges are averaged separately over the edges whose
/// two endpoints carry valid depth, and the two means are added.
pub(crate) fn evaluate(
    image: &Frame,
    depth: &DepthMap,
    frozen: Option<(&[i8], &[i8])>,
    want_grad: bool,
    faults: AdjointFaults,
) -> Result<SmoothEval> {
    let (w, h) = depth.dims();
    let n_valid = depth.valid_count();
    if n_valid == 0 {
        return Err(Error::Degenerate("smoothness over a depth map with no valid pixel".into()));
    }
    let disp: Vec<f64> = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(d, v)| if *v { 1.0 / d } else { 0.0 })
        .collect();
    let mean = disp.iter().sum::<f64>() / n_valid as f64;
    let norm: Vec<f64> = disp.iter().map(|d| d / mean).collect();

    let mut signs_x = vec![0i8; w * h];
    let mut signs_y = vec![0i8; w * h];
    // (edge start, edge end, image weight)
    let mut edges_x = Vec::new();
    let mut edges_y = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !depth.valid[p] {
                continue;
            }
            if x + 1 < w && depth.valid[p + 1] {
                edges_x.push((p, p + 1, edge_weight(image.pixels[p], image.pixels[p + 1])));
            }
            if y + 1 < h && depth.valid[p + w] {
                edges_y.push((p, p + w, edge_weight(image.pixels[p], image.pixels[p + w])));
            }
        }
    }

    let mut value = 0.0;
    let mut g_norm = want_grad.then(|| vec![0.0; w * h]);
    for (edges, signs, frozen_signs) in [
        (&edges_x, &mut signs_x, frozen.map(|f| f.0)),
        (&edges_y, &mut signs_y, frozen.map(|f| f.1)),
    ] {
        if edges.is_empty() {
            continue;
        }
        let inv = 1.0 / edges.len() as f64;
        let mut sum = 0.0;
        for &(p, q, weight) in edges {
            let diff = norm[q] - norm[p];
            let s = match frozen_signs {
                Some(f) => f[p],
                None => sign(diff),
            };
            signs[p] = s;
            sum += s as f64 * diff * weight;
            if let Some(g) = g_norm.as_mut() {
                let mut c = s as f64 * weight * inv;
                if faults.flip_smoothness {
                    c = -c;
                }
                g[q] += c;
                g[p] -= c;
            }
        }
        value += sum * inv;
    }

    let grad = g_norm.map(|g| {
        // d* = disp / mean(disp): chain through the normalization, then 1/D.
        let coupled: f64 = g.iter().zip(&disp).map(|(a, b)| a * b).sum::<f64>() / (mean * mean * n_valid as f64);
        (0..w * h)
            .map(|i| {
                if !depth.valid[i] {
                    return 0.0;
                }
                let g_disp = g[i] / mean - coupled;
                -g_disp * disp[i] * disp[i]
            })
            .collect()
    });

    Ok(SmoothEval {
        value,
        signs_x,
        signs_y,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn value(image: &Frame, depth: &DepthMap) -> f64 {
        evaluate(image, depth, None, false, AdjointFaults::default()).unwrap().value
    }

    #[test]
    fn constant_depth_is_zero() {
        let img = Frame::from_fn(5, 4, |x, y| [(x * y) as f64 / 20.0; 3]);
        assert_eq!(value(&img, &DepthMap::constant(5, 4, 3.0)), 0.0);
    }

    #[test]
    fn disparity_ramp_closed_form() {
        // disparity 1 + x on a 4×4 grid; mean disparity 2.5, so d* steps by 0.4
        // along x and is constant along y.
        let img = Frame::filled(4, 4, [0.5; 3]);
        let depth = DepthMap::from_fn(4, 4, |x, _| 1.0 / (1.0 + x as f64));
        let v = value(&img, &depth);
        assert!((v - 0.4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn image_edge_damps_penalty() {
        let flat = Frame::filled(4, 4, [0.5; 3]);
        let edged = Frame::from_fn(4, 4, |x, _| if x < 2 { [0.0; 3] } else { [1.0; 3] });
        let depth = DepthMap::from_fn(4, 4, |x, _| 1.0 / (1.0 + x as f64));
        assert!(value(&edged, &depth) < value(&flat, &depth));
    }

    #[test]
    fn all_invalid_is_degenerate() {
        let img = Frame::filled(3, 3, [0.5; 3]);
        let depth = DepthMap::from_values(3, 3, vec![0.0; 9]).unwrap();
        assert!(evaluate(&img, &depth, None, false, AdjointFaults::default()).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (6, 5);
        let px: Vec<[f64; 3]> = (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let img = Frame::new(w, h, px, 0).unwrap();
        let vals: Vec<f64> = (0..w * h).map(|_| 1.0 + rng.random::<f64>()).collect();
        let mut depth = DepthMap::from_values(w, h, vals).unwrap();
        depth.invalidate(7);
        let e = evaluate(&img, &depth, None, true, AdjointFaults::default()).unwrap();
        let g = e.grad.unwrap();
        let frozen = Some((e.signs_x.as_slice(), e.signs_y.as_slice()));
        let step = 1e-6;
        for i in 0..w * h {
            if !depth.valid[i] {
                assert_eq!(g[i], 0.0);
                continue;
            }
            let mut p = depth.clone();
            p.values[i] += step;
            let mut m = depth.clone();
            m.values[i] -= step;
            let fp = evaluate(&img, &p, frozen, false, AdjointFaults::default()).unwrap().value;
            let fm = evaluate(&img, &m, frozen, false, AdjointFaults::default()).unwrap().value;
            let fd = (fp - fm) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }
}
