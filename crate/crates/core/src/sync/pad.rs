//! Cube padding: a face's convolution halo is filled with pixels projected
//! from the neighboring faces instead of zeros.
//!
//! Every halo pixel is treated as a pixel of its own face that happens to lie
//! outside `[0, 1)`. Its ray is pushed through [`face_of_vector`], which may
//! land on an edge neighbor or, for corner halo pixels, on whichever face
//! the ray actually hits. No corner special case exists.

use super::multiplane::{MultiPlaneTensor, PLANES};
use crate::error::{invalid, Result};
use crate::geometry::{face_of_vector, uv_of_pixel, CubeFace, FaceUV, Filter};
use crate::numeric::{BilinearTaps, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
struct HaloSource {
    /// Flat index into the padded `(H + 2p) x (W + 2p)` plane.
    dst: usize,
    face: u8,
    taps: BilinearTaps,
}

/// Precomputed halo sources for one `(size, halo, filter)` combination.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloPlan {
    size: usize,
    halo: usize,
    sources: [Vec<HaloSource>; PLANES],
}

impl HaloPlan {
    pub fn new(size: usize, halo: usize, filter: Filter) -> Result<Self> {
        if halo < 1 || halo * 4 > size {
            return Err(invalid(format!("halo width {halo} outside [1, {}] for face size {size}", size / 4)));
        }
        let padded = size + 2 * halo;
        let sources = CubeFace::ALL.map(|face| {
            let mut v = Vec::with_capacity(padded * padded - size * size);
            for pi in 0..padded {
                for pj in 0..padded {
                    let inside = (halo..halo + size).contains(&pi) && (halo..halo + size).contains(&pj);
                    if inside {
                        continue;
                    }
                    let virt = FaceUV::new(
                        face,
                        uv_of_pixel(pj as f64 - halo as f64, size),
                        uv_of_pixel(pi as f64 - halo as f64, size),
                    );
                    let (a, b) = virt.tangent();
                    let hit = face_of_vector(face.ray(a, b));
                    let taps = match filter {
                        Filter::Bilinear => {
                            let (x, y) = hit.pixel_coords(size);
                            BilinearTaps::new(size, size, x, y)
                        }
                        Filter::Nearest => {
                            let (r, c) = hit.nearest_pixel(size);
                            let k = r * size + c;
                            BilinearTaps {
                                index: [k; 4],
                                fx: 0.0,
                                fy: 0.0,
                            }
                        }
                    };
                    v.push(HaloSource {
                        dst: pi * padded + pj,
                        face: hit.face.index() as u8,
                        taps,
                    });
                }
            }
            v
        });
        Ok(Self { size, halo, sources })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    pub fn padded_size(&self) -> usize {
        self.size + 2 * self.halo
    }

    /// Pad one sample `[M, C, H, W]` into `[M, C, H + 2p, W + 2p]`.
    pub fn pad(&self, x: &[f64], channels: usize) -> Vec<f64> {
        let (n, p, np) = (self.size, self.halo, self.padded_size());
        let plane = n * n;
        let mut out = vec![0.0; PLANES * channels * np * np];
        for f in 0..PLANES {
            for c in 0..channels {
                let src = &x[(f * channels + c) * plane..(f * channels + c + 1) * plane];
                let dst = &mut out[(f * channels + c) * np * np..(f * channels + c + 1) * np * np];
                for i in 0..n {
                    dst[(i + p) * np + p..(i + p) * np + p + n].copy_from_slice(&src[i * n..(i + 1) * n]);
                }
                for s in &self.sources[f] {
                    let sf = s.face as usize;
                    let splane = &x[(sf * channels + c) * plane..(sf * channels + c + 1) * plane];
                    dst[s.dst] = s.taps.eval(splane);
                }
            }
        }
        out
    }

    /// Adjoint of [`HaloPlan::pad`]: folds padded gradients back onto the
    /// unpadded planes.
    pub fn pad_backward(&self, dpadded: &[f64], channels: usize) -> Vec<f64> {
        let (n, p, np) = (self.size, self.halo, self.padded_size());
        let plane = n * n;
        let mut dx = vec![0.0; PLANES * channels * plane];
        for f in 0..PLANES {
            for c in 0..channels {
                let g = &dpadded[(f * channels + c) * np * np..(f * channels + c + 1) * np * np];
                {
                    let dst = &mut dx[(f * channels + c) * plane..(f * channels + c + 1) * plane];
                    for i in 0..n {
                        for j in 0..n {
                            dst[i * n + j] += g[(i + p) * np + p + j];
                        }
                    }
                }
                for s in &self.sources[f] {
                    let sf = s.face as usize;
                    let gv = g[s.dst];
                    let w = s.taps.weights();
                    let base = (sf * channels + c) * plane;
                    for (k, &wk) in s.taps.index.iter().zip(&w) {
                        dx[base + k] += wk * gv;
                    }
                }
            }
        }
        dx
    }
}

/// One face with its halo, `[C, H + 2p, W + 2p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedFace {
    pub face: CubeFace,
    pub halo: usize,
    pub data: Tensor,
}

/// Cube-pad every plane of every batch item; returns `B * 6` padded faces
/// in batch-major, face-minor order.
pub fn cube_pad(x: &MultiPlaneTensor, halo: usize, filter: Filter) -> Result<Vec<PaddedFace>> {
    let plan = HaloPlan::new(x.size(), halo, filter)?;
    let (c, np) = (x.channels(), plan.padded_size());
    let mut out = Vec::with_capacity(x.batch() * PLANES);
    for b in 0..x.batch() {
        let padded = plan.pad(x.sample(b), c);
        for face in CubeFace::ALL {
            let len = c * np * np;
            let data = padded[face.index() * len..(face.index() + 1) * len].to_vec();
            out.push(PaddedFace {
                face,
                halo,
                data: Tensor::from_vec(&[c, np, np], data)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_of, CubemapGrid, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn halo_range_is_checked() {
        assert!(HaloPlan::new(8, 0, Filter::Bilinear).is_err());
        assert!(HaloPlan::new(8, 3, Filter::Bilinear).is_err());
        assert!(HaloPlan::new(8, 2, Filter::Bilinear).is_ok());
    }

    #[test]
    fn constant_cube_gives_constant_halo() {
        let x = MultiPlaneTensor::new(Tensor::full(&[1, 6, 2, 8, 8], 0.7)).unwrap();
        for filter in [Filter::Nearest, Filter::Bilinear] {
            for pf in cube_pad(&x, 2, filter).unwrap() {
                assert!(pf.data.data().iter().all(|&v| v == 0.7));
            }
        }
    }

    #[test]
    fn interior_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = MultiPlaneTensor::new(Tensor::from_fn(&[2, 6, 3, 8, 8], |_| rng.random())).unwrap();
        let padded = cube_pad(&x, 2, Filter::Bilinear).unwrap();
        for (k, pf) in padded.iter().enumerate() {
            let (b, face) = (k / 6, CubeFace::ALL[k % 6]);
            for c in 0..3 {
                for i in 0..8 {
                    for j in 0..8 {
                        assert_eq!(pf.data.get(&[c, i + 2, j + 2]).to_bits(), x.get(b, face, c, i, j).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn linear_field_halo_matches_analytic_values() {
        let n = 64;
        let a = Vec3::new(0.3, -0.7, 0.5);
        let cube = CubemapGrid::from_direction_fn(n, 1, |d, o| o[0] = d.dot(a));
        let x = MultiPlaneTensor::from_cubemaps(&[cube]).unwrap();
        let p = 3;
        let padded = cube_pad(&x, p, Filter::Bilinear).unwrap();
        let (mut edge_worst, mut corner_worst): (f64, f64) = (0.0, 0.0);
        let outside = |k: usize| k < p || k >= n + p;
        for pf in &padded {
            for pi in 0..n + 2 * p {
                for pj in 0..n + 2 * p {
                    let virt = FaceUV::new(pf.face, uv_of_pixel(pj as f64 - p as f64, n), uv_of_pixel(pi as f64 - p as f64, n));
                    let d = direction_of(virt).0;
                    let err = (pf.data.get(&[0, pi, pj]) - d.dot(a)).abs();
                    if outside(pi) && outside(pj) {
                        corner_worst = corner_worst.max(err);
                    } else {
                        edge_worst = edge_worst.max(err);
                    }
                }
            }
        }
        assert!(edge_worst < 1e-3, "edge halo worst {edge_worst}");
        // Corner halo rays land on the seam between two other faces, half a
        // pixel past the last pixel center, where face-local bilinear
        // sampling clamps: first-order error of |grad| * (half a pixel).
        let half_pixel = |grad: f64| grad * 0.5 * (2.0 / n as f64);
        assert!(corner_worst < half_pixel(a.norm()), "corner halo worst {corner_worst}");
    }

    #[test]
    fn backward_is_the_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, c) = (8, 2);
        let plan = HaloPlan::new(n, 2, Filter::Bilinear).unwrap();
        let x: Vec<f64> = (0..6 * c * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let np = plan.padded_size();
        let y: Vec<f64> = (0..6 * c * np * np).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = plan.pad(&x, c).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(plan.pad_backward(&y, c)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
