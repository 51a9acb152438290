use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Lattice value noise over a rectangle, values in [0, 1], quintic fade.
pub(crate) struct ValueNoise {
    x0: f64,
    y0: f64,
    inv: f64,
    nx: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    pub fn new(rng: &mut ChaCha8Rng, x0: f64, y0: f64, width: f64, height: f64, wavelength: f64) -> Self {
        let nx = (width / wavelength).ceil() as usize + 3;
        let ny = (height / wavelength).ceil() as usize + 3;
        let values = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
        ValueNoise {
            x0,
            y0,
            inv: 1.0 / wavelength,
            nx,
            values,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.x0) * self.inv;
        let v = (y - self.y0) * self.inv;
        let (i, j) = (u.floor().max(0.0) as usize, v.floor().max(0.0) as usize);
        let (fx, fy) = (fade(u - i as f64), fade(v - j as f64));
        let at = |a: usize, b: usize| self.values[b * self.nx + a];
        let top = at(i, j) + (at(i + 1, j) - at(i, j)) * fx;
        let bottom = at(i, j + 1) + (at(i + 1, j + 1) - at(i, j + 1)) * fx;
        top + (bottom - top) * fy
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Sum of octaves with halving wavelength, normalized back to [0, 1].
pub(crate) struct Octaves {
    layers: Vec<(ValueNoise, f64)>,
    total: f64,
}

impl Octaves {
    pub fn new(
        rng: &mut ChaCha8Rng,
        rect: (f64, f64, f64, f64),
        wavelength: f64,
        count: usize,
        persistence: f64,
    ) -> Self {
        let mut layers = Vec::with_capacity(count);
        let mut amp = 1.0;
        let mut wl = wavelength;
        for _ in 0..count {
            layers.push((ValueNoise::new(rng, rect.0, rect.1, rect.2, rect.3, wl), amp));
            amp *= persistence;
            wl *= 0.5;
        }
        let total = layers.iter().map(|l| l.1).sum();
        Octaves { layers, total }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.layers.iter().map(|(n, a)| a * n.eval(x, y)).sum::<f64>() / self.total
    }
}

/// Separable box blur with clamped borders.
pub(crate) fn box_blur<const C: usize>(data: &[[f64; C]], nx: usize, ny: usize, radius: usize) -> Vec<[f64; C]> {
    if radius == 0 {
        return data.to_vec();
    }
    let pass = |src: &[[f64; C]], horizontal: bool| -> Vec<[f64; C]> {
        let mut out = vec![[0.0; C]; src.len()];
        for j in 0..ny {
            for i in 0..nx {
                let mut acc = [0.0; C];
                let mut n = 0.0;
                for d in -(radius as i64)..=radius as i64 {
                    let (a, b) = if horizontal {
                        ((i as i64 + d).clamp(0, nx as i64 - 1) as usize, j)
                    } else {
                        (i, (j as i64 + d).clamp(0, ny as i64 - 1) as usize)
                    };
                    let v = src[b * nx + a];
                    for c in 0..C {
                        acc[c] += v[c];
                    }
                    n += 1.0;
                }
                out[j * nx + i] = acc.map(|v| v / n);
            }
        }
        out
    };
    pass(&pass(data, true), false)
}
