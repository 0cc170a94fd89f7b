use super::Tensor;
use crate::error::{shape_err, Result};

/// The four source pixels and fractional offsets of a bilinear lookup.
/// Taps are ordered `(y0, x0), (y0, x1), (y1, x0), (y1, x1)` as flat
/// indices into an `H x W` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTaps {
    pub index: [usize; 4],
    pub fx: f64,
    pub fy: f64,
}

impl BilinearTaps {
    /// Border-clamped taps at continuous pixel coordinates `(x, y)`, pixel
    /// centers on integers.
    pub fn new(h: usize, w: usize, x: f64, y: f64) -> Self {
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        Self {
            index: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            fx: xc - x0 as f64,
            fy: yc - y0 as f64,
        }
    }

    /// Interpolate in lerp form, so equal taps reproduce their value exactly.
    #[inline]
    pub fn eval(&self, plane: &[f64]) -> f64 {
        let [a, b, c, d] = self.index.map(|k| plane[k]);
        let top = a + (b - a) * self.fx;
        let bot = c + (d - c) * self.fx;
        top + (bot - top) * self.fy
    }

    /// Linear weights of the four taps (sum to one).
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }
}

#[inline]
pub fn bilinear_at(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    BilinearTaps::new(h, w, x, y).eval(plane)
}

/// Sample a `[C, H, W]` tensor at `coords` given as `(x, y)` pairs in
/// continuous pixel space. Returns `[C, N]`.
pub fn bilinear_sample(x: &Tensor, coords: &[(f64, f64)]) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(shape_err(format!("bilinear_sample expects [C, H, W], got {:?}", x.shape())));
    };
    let n = coords.len();
    let mut out = Tensor::zeros(&[c, n]);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    let taps: Vec<BilinearTaps> = coords.iter().map(|&(px, py)| BilinearTaps::new(h, w, px, py)).collect();
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out.data_mut()[ch * n..(ch + 1) * n];
        for (o, t) in dst.iter_mut().zip(&taps) {
            *o = t.eval(plane);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pixel_centers_are_exact() {
        let x = Tensor::from_fn(&[2, 3, 4], |k| (k as f64).sqrt());
        let coords: Vec<(f64, f64)> = (0..3).flat_map(|i| (0..4).map(move |j| (j as f64, i as f64))).collect();
        let out = bilinear_sample(&x, &coords).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn midpoint() {
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        let out = bilinear_sample(&x, &[(0.5, 0.0)]).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn border_clamps() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = bilinear_sample(&x, &[(-5.0, -5.0), (9.0, 9.0), (-1.0, 0.5)]).unwrap();
        assert_eq!(out.data(), &[1.0, 4.0, 2.0]);
    }

    #[test]
    fn random_coords_match_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (7, 9);
        let x = Tensor::from_fn(&[2, h, w], |_| rng.random_range(-1.0..1.0));
        let coords: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(-1.0..w as f64), rng.random_range(-1.0..h as f64)))
            .collect();
        let out = bilinear_sample(&x, &coords).unwrap();
        for (k, &(px, py)) in coords.iter().enumerate() {
            let px = px.clamp(0.0, (w - 1) as f64);
            let py = py.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            for c in 0..2 {
                let mut acc = 0.0;
                for (yy, wy) in [(y0, 1.0 - (py - y0 as f64)), ((y0 + 1).min(h - 1), py - y0 as f64)] {
                    for (xx, wx) in [(x0, 1.0 - (px - x0 as f64)), ((x0 + 1).min(w - 1), px - x0 as f64)] {
                        acc += wy * wx * x.get(&[c, yy, xx]);
                    }
                }
                assert!((out.get(&[c, k]) - acc).abs() < 1e-12);
            }
        }
    }
}
