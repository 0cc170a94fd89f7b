//! Synthetic RGB-D panoramas: smooth random fields on the sphere, so ground
//! truth is analytic and continuous across every seam.

use rand::Rng;
use rand_distr::StandardNormal;

use super::state::{FaceMask, IMG_CHANNELS};
use crate::depth::{euclidean_to_z, normalize_depth, DepthConvention, DepthCubemap, DepthNormalization, RangeStatistic};
use crate::error::{shape_err, Result};
use crate::geometry::{CubeFace, CubemapGrid, Vec3};
use crate::numeric::Tensor;
use crate::sync::{MultiPlaneTensor, PLANES};

/// Degree <= 2 polynomial in the direction: a constant plus the eight
/// non-constant spherical harmonics of bands 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothField {
    pub constant: f64,
    pub coef: [f64; 8],
}

impl SmoothField {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, constant_std: f64, std: f64) -> Self {
        let mut coef = [0.0; 8];
        for c in &mut coef {
            *c = std * rng.sample::<f64, _>(StandardNormal);
        }
        Self {
            constant: constant_std * rng.sample::<f64, _>(StandardNormal),
            coef,
        }
    }

    pub fn eval(&self, d: Vec3) -> f64 {
        let m = [d.x, d.y, d.z, d.x * d.x - d.z * d.z, d.y * d.y - d.z * d.z, d.x * d.y, d.y * d.z, d.z * d.x];
        self.constant + self.coef.iter().zip(m).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// One ground-truth panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Three channels in `[0, 1]`.
    pub rgb: CubemapGrid,
    /// Z-depth.
    pub depth: DepthCubemap,
}

pub fn synthetic_scene<R: Rng + ?Sized>(face_size: usize, rng: &mut R) -> Result<SyntheticScene> {
    let colors: Vec<SmoothField> = (0..3).map(|_| SmoothField::random(rng, 0.8, 0.7)).collect();
    let log_depth = SmoothField::random(rng, 0.3, 0.25);
    let rgb = CubemapGrid::from_direction_fn(face_size, 3, |d, out| {
        for (o, f) in out.iter_mut().zip(&colors) {
            *o = 0.5 + 0.45 * f.eval(d).tanh();
        }
    });
    let euclid = CubemapGrid::from_direction_fn(face_size, 1, |d, out| out[0] = log_depth.eval(d).exp());
    let depth = euclidean_to_z(&DepthCubemap::new(euclid, DepthConvention::Euclidean)?)?;
    Ok(SyntheticScene { rgb, depth })
}

/// Model-space blocks of one panorama, each `[6, 4, n, n]` flattened:
/// image `[2r-1, 2g-1, 2b-1, 0]`, depth `[z, z, z, 0]` after normalization
/// by the condition face's range.
pub fn encode_rgbd(rgb: &CubemapGrid, depth: &DepthCubemap, norm: &DepthNormalization) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rgb.size();
    if rgb.channels() != 3 || depth.size() != n {
        return Err(shape_err("expected a 3-channel image and a depth map of the same face size"));
    }
    let z = normalize_depth(depth, norm)?;
    let plane = n * n;
    let mut c = vec![0.0; PLANES * IMG_CHANNELS * plane];
    let mut d = vec![0.0; PLANES * IMG_CHANNELS * plane];
    for face in CubeFace::ALL {
        let f = face.index();
        let src = rgb.face_slice(face);
        let zs = z.plane(0, face);
        for ch in 0..3 {
            let dst = (f * IMG_CHANNELS + ch) * plane;
            for k in 0..plane {
                c[dst + k] = 2.0 * src[ch * plane + k] - 1.0;
                d[dst + k] = zs[k];
            }
        }
    }
    Ok((c, d))
}

/// Inverse of [`encode_rgbd`] for one sample: RGB clamped to `[0, 1]`,
/// depth as the mean of the three depth channels, denormalized.
pub fn decode_rgbd(c: &[f64], d: &[f64], n: usize, norm: &DepthNormalization) -> Result<(CubemapGrid, DepthCubemap)> {
    let plane = n * n;
    if c.len() != PLANES * IMG_CHANNELS * plane || d.len() != c.len() {
        return Err(shape_err("latent blocks have the wrong length"));
    }
    let mut rgb = CubemapGrid::zeros(n, 3);
    let mut z = CubemapGrid::zeros(n, 1);
    for face in CubeFace::ALL {
        let f = face.index();
        let out = rgb.face_slice_mut(face);
        for ch in 0..3 {
            let src = (f * IMG_CHANNELS + ch) * plane;
            for k in 0..plane {
                out[ch * plane + k] = ((c[src + k] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        let zo = z.face_slice_mut(face);
        for k in 0..plane {
            let base = f * IMG_CHANNELS * plane + k;
            let mean = (d[base] + d[base + plane] + d[base + 2 * plane]) / 3.0;
            zo[k] = norm.denormalize(mean);
        }
    }
    Ok((rgb, DepthCubemap::new(z, DepthConvention::ZDepth)?))
}

/// A batch of clean latents, `[B, 6, 4, n, n]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0_c: MultiPlaneTensor,
    pub x0_d: MultiPlaneTensor,
    pub mask: FaceMask,
}

impl TrainBatch {
    pub fn batch(&self) -> usize {
        self.x0_c.batch()
    }

    pub fn size(&self) -> usize {
        self.x0_c.size()
    }
}

/// Random scenes conditioned on `condition`, each with its own depth
/// rescale factor drawn by `rescale`.
pub fn synthetic_batch<R: Rng + ?Sized>(
    batch: usize,
    face_size: usize,
    condition: CubeFace,
    rng: &mut R,
    mut rescale: impl FnMut(&mut R) -> f64,
) -> Result<TrainBatch> {
    let n = face_size;
    let mut cs = Vec::with_capacity(batch * PLANES * IMG_CHANNELS * n * n);
    let mut ds = Vec::with_capacity(cs.capacity());
    for _ in 0..batch {
        let scene = synthetic_scene(n, rng)?;
        let s = rescale(rng);
        let norm = DepthNormalization::from_condition(&scene.depth, condition, s, RangeStatistic::MinMax)?;
        let (c, d) = encode_rgbd(&scene.rgb, &scene.depth, &norm)?;
        cs.extend(c);
        ds.extend(d);
    }
    let shape = [batch, PLANES, IMG_CHANNELS, n, n];
    Ok(TrainBatch {
        x0_c: MultiPlaneTensor::new(Tensor::from_vec(&shape, cs)?)?,
        x0_d: MultiPlaneTensor::new(Tensor::from_vec(&shape, ds)?)?,
        mask: FaceMask::conditioned_on(condition),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::sample_rescale_s;
    use crate::geometry::FaceAdjacency;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scenes_are_in_range_and_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 32;
        for _ in 0..5 {
            let s = synthetic_scene(n, &mut rng).unwrap();
            assert!(s.rgb.data().iter().all(|v| (0.05..=0.95).contains(v)));
            s.depth.check_positive().unwrap();
            // Color steps across seams are as small as steps inside a face.
            let mut seam: f64 = 0.0;
            for (face, edge, _) in FaceAdjacency::undirected_edges() {
                for t in 0..n {
                    let (r, c) = edge.pixel(t, n);
                    let (nf, nr, nc) = FaceAdjacency::across(face, edge, t, n);
                    for ch in 0..3 {
                        seam = seam.max((s.rgb.get(face, ch, r, c) - s.rgb.get(nf, ch, nr, nc)).abs());
                    }
                }
            }
            let mut inner: f64 = 0.0;
            for face in CubeFace::ALL {
                for i in 0..n {
                    for j in 0..n - 1 {
                        for ch in 0..3 {
                            inner = inner.max((s.rgb.get(face, ch, i, j) - s.rgb.get(face, ch, i, j + 1)).abs());
                        }
                    }
                }
            }
            assert!(seam <= 1.5 * inner, "seam {seam} inner {inner}");
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 8;
        let scene = synthetic_scene(n, &mut rng).unwrap();
        let norm = DepthNormalization::from_condition(&scene.depth, CubeFace::Front, 0.6, RangeStatistic::MinMax).unwrap();
        let (c, d) = encode_rgbd(&scene.rgb, &scene.depth, &norm).unwrap();
        // Condition face depth spans exactly [-s, s].
        let front = &d[..n * n];
        let lo = front.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = front.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 0.6).abs() < 1e-12 && (hi - 0.6).abs() < 1e-12);
        // Padding channel is zero.
        assert!(c[3 * n * n..4 * n * n].iter().all(|&v| v == 0.0));
        let (rgb, depth) = decode_rgbd(&c, &d, n, &norm).unwrap();
        for (a, b) in rgb.data().iter().zip(scene.rgb.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in depth.grid().data().iter().zip(scene.depth.grid().data()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_is_seed_deterministic() {
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            synthetic_batch(3, 8, CubeFace::Front, &mut rng, |r| sample_rescale_s(r)).unwrap()
        };
        let (a, b) = (make(), make());
        assert_eq!(a, b);
        assert_eq!(a.batch(), 3);
        assert_eq!(a.mask, FaceMask::conditioned_on(CubeFace::Front));
    }
}
