//! Deterministic DDIM sampling from `v` predictions.

use rand::Rng;
use rand_distr::StandardNormal;

use super::data::{decode_rgbd, encode_rgbd};
use super::schedule::{reconstruct_eps, reconstruct_x0, NoiseSchedule};
use super::state::{assemble_input, slice_channels, DiffusionState, FaceMask, IMG_CHANNELS};
use super::unet::VPredictor;
use crate::depth::{DepthCubemap, DepthConvention, DepthNormalization, RangeStatistic, INFERENCE_RESCALE_S};
use crate::encoding::PositionalEncoding;
use crate::error::{shape_err, Result};
use crate::geometry::{CubeFace, CubemapGrid};
use crate::numeric::Tensor;
use crate::sync::{MultiPlaneTensor, PLANES};

/// Clean latents produced by the sampler, `[B, 6, 4, H, W]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledLatents {
    pub x0_c: MultiPlaneTensor,
    pub x0_d: MultiPlaneTensor,
}

fn impose(z: &mut MultiPlaneTensor, cond: &MultiPlaneTensor, mask: FaceMask) {
    let per_face = IMG_CHANNELS * z.size() * z.size();
    for b in 0..z.batch() {
        let src = cond.sample(b).to_vec();
        let dst = z.sample_mut(b);
        for f in (0..PLANES).filter(|&f| !mask.is_generated(f)) {
            dst[f * per_face..(f + 1) * per_face].copy_from_slice(&src[f * per_face..(f + 1) * per_face]);
        }
    }
}

fn ddim_update(z: &MultiPlaneTensor, v: &MultiPlaneTensor, a: f64, s: f64, a_prev: f64, s_prev: f64) -> Result<(MultiPlaneTensor, Vec<f64>)> {
    let x0 = reconstruct_x0(z.data(), v.data(), a, s);
    let eps = reconstruct_eps(z.data(), v.data(), a, s);
    let next = x0.iter().zip(&eps).map(|(x, e)| a_prev * x + s_prev * e).collect();
    Ok((MultiPlaneTensor::new(Tensor::from_vec(z.tensor().shape(), next)?)?, x0))
}

/// DDIM with zero stochasticity. Condition faces of `cond_c` / `cond_d`
/// are held fixed at every step; generated faces start from Gaussian noise
/// drawn from `rng`. `observe` sees the state before every network call.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample_latents<P: VPredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    cond_c: &MultiPlaneTensor,
    cond_d: &MultiPlaneTensor,
    mask: FaceMask,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
    steps: usize,
    rng: &mut R,
    mut observe: impl FnMut(&DiffusionState),
) -> Result<SampledLatents> {
    if cond_c.tensor().shape() != cond_d.tensor().shape() || cond_c.channels() != IMG_CHANNELS {
        return Err(shape_err("condition blocks must both be [B, 6, 4, H, W]"));
    }
    let ts = schedule.ddim_timesteps(steps)?;
    let noise = |x: &MultiPlaneTensor, rng: &mut R| -> Result<MultiPlaneTensor> {
        let data = (0..x.data().len()).map(|_| rng.sample(StandardNormal)).collect();
        MultiPlaneTensor::new(Tensor::from_vec(x.tensor().shape(), data)?)
    };
    let mut z_c = noise(cond_c, rng)?;
    let mut z_d = noise(cond_d, rng)?;
    impose(&mut z_c, cond_c, mask);
    impose(&mut z_d, cond_d, mask);
    let bsz = cond_c.batch();
    let mut x0 = (Vec::new(), Vec::new());
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let state = DiffusionState {
            z_c,
            z_d,
            mask,
            posenc: posenc.clone(),
            t: vec![t; bsz],
        };
        observe(&state);
        let v = model.predict_v(&assemble_input(&state)?, &state.t)?;
        let v_c = slice_channels(&v, 0..IMG_CHANNELS);
        let v_d = slice_channels(&v, IMG_CHANNELS..2 * IMG_CHANNELS);
        let (a, s, ap, sp) = (schedule.alpha(t), schedule.sigma(t), schedule.alpha(t_prev), schedule.sigma(t_prev));
        let (nc, xc) = ddim_update(&state.z_c, &v_c, a, s, ap, sp)?;
        let (nd, xd) = ddim_update(&state.z_d, &v_d, a, s, ap, sp)?;
        z_c = nc;
        z_d = nd;
        impose(&mut z_c, cond_c, mask);
        impose(&mut z_d, cond_d, mask);
        x0 = (xc, xd);
    }
    let shape = cond_c.tensor().shape().to_vec();
    let mut out_c = MultiPlaneTensor::new(Tensor::from_vec(&shape, x0.0)?)?;
    let mut out_d = MultiPlaneTensor::new(Tensor::from_vec(&shape, x0.1)?)?;
    impose(&mut out_c, cond_c, mask);
    impose(&mut out_d, cond_d, mask);
    Ok(SampledLatents { x0_c: out_c, x0_d: out_d })
}

/// A generated panorama in scene units.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPanorama {
    pub rgb: CubemapGrid,
    pub depth: DepthCubemap,
    pub normalization: DepthNormalization,
}

impl GeneratedPanorama {
    /// Four channels: RGB then Z-depth.
    pub fn to_rgbd(&self) -> Result<CubemapGrid> {
        let n = self.rgb.size();
        let mut out = CubemapGrid::zeros(n, 4);
        for face in CubeFace::ALL {
            let plane = n * n;
            let dst = out.face_slice_mut(face);
            dst[..3 * plane].copy_from_slice(self.rgb.face_slice(face));
            dst[3 * plane..].copy_from_slice(self.depth.grid().face_slice(face));
        }
        Ok(out)
    }
}

/// Generate the five missing faces around one RGB-D face. `rgb` is three
/// channels in `[0, 1]`, `depth` Z-depth, both face-sized rasters given as
/// cubemaps whose other faces are ignored. The condition face of the result
/// is copied from the input, so it is bit-equal to it.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample<P: VPredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    rgb: &CubemapGrid,
    depth: &DepthCubemap,
    condition: CubeFace,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
    steps: usize,
    rng: &mut R,
) -> Result<GeneratedPanorama> {
    depth.require(DepthConvention::ZDepth, "convert with euclidean_to_z before sampling")?;
    let n = rgb.size();
    let norm = DepthNormalization::from_condition(depth, condition, INFERENCE_RESCALE_S, RangeStatistic::MinMax)?;
    let (c, d) = encode_rgbd(rgb, depth, &norm)?;
    let shape = [1, PLANES, IMG_CHANNELS, n, n];
    let cond_c = MultiPlaneTensor::new(Tensor::from_vec(&shape, c)?)?;
    let cond_d = MultiPlaneTensor::new(Tensor::from_vec(&shape, d)?)?;
    let mask = FaceMask::conditioned_on(condition);
    let out = ddim_sample_latents(model, &cond_c, &cond_d, mask, schedule, posenc, steps, rng, |_| {})?;
    let (mut out_rgb, out_depth) = decode_rgbd(out.x0_c.data(), out.x0_d.data(), n, &norm)?;
    out_rgb.face_slice_mut(condition).copy_from_slice(rgb.face_slice(condition));
    let mut z = out_depth.into_grid();
    z.face_slice_mut(condition).copy_from_slice(depth.grid().face_slice(condition));
    Ok(GeneratedPanorama {
        rgb: out_rgb,
        depth: DepthCubemap::new(z, DepthConvention::ZDepth)?,
        normalization: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::data::{synthetic_batch, synthetic_scene};
    use crate::diffusion::unet::{ToyUNet, UNetConfig};
    use crate::encoding::xyz_encoding;
    use crate::sync::SyncFlags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Knows the clean latents and returns the `v` that reconstructs them.
    struct Oracle {
        x0_c: MultiPlaneTensor,
        x0_d: MultiPlaneTensor,
        schedule: NoiseSchedule,
    }

    impl VPredictor for Oracle {
        fn predict_v(&self, input: &MultiPlaneTensor, t: &[usize]) -> Result<MultiPlaneTensor> {
            let n = input.size();
            let plane = n * n;
            let (a, s) = (self.schedule.alpha(t[0]), self.schedule.sigma(t[0]));
            let mut out = MultiPlaneTensor::zeros(input.batch(), 2 * IMG_CHANNELS, n);
            for b in 0..input.batch() {
                let x = input.sample(b);
                let o = out.sample_mut(b);
                for f in 0..PLANES {
                    for k in 0..IMG_CHANNELS * plane {
                        let zc = x[f * 12 * plane + k];
                        let zd = x[f * 12 * plane + IMG_CHANNELS * plane + k];
                        let xc = self.x0_c.sample(b)[f * IMG_CHANNELS * plane + k];
                        let xd = self.x0_d.sample(b)[f * IMG_CHANNELS * plane + k];
                        o[f * 8 * plane + k] = (a * zc - xc) / s;
                        o[f * 8 * plane + IMG_CHANNELS * plane + k] = (a * zd - xd) / s;
                    }
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn oracle_model_recovers_the_clean_latents() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = synthetic_batch(2, n, CubeFace::Front, &mut rng, |_| 0.6).unwrap();
        let schedule = NoiseSchedule::new(1000, Default::default()).unwrap();
        let oracle = Oracle {
            x0_c: batch.x0_c.clone(),
            x0_d: batch.x0_d.clone(),
            schedule: schedule.clone(),
        };
        let posenc = xyz_encoding(n).unwrap();
        let mut cond_seen = true;
        let out = ddim_sample_latents(&oracle, &batch.x0_c, &batch.x0_d, batch.mask, &schedule, &posenc, 1000, &mut rng, |st| {
            let per = IMG_CHANNELS * n * n;
            for b in 0..2 {
                cond_seen &= st.z_c.sample(b)[..per] == batch.x0_c.sample(b)[..per];
                cond_seen &= st.z_d.sample(b)[..per] == batch.x0_d.sample(b)[..per];
            }
        })
        .unwrap();
        assert!(cond_seen, "condition face drifted during sampling");
        let err = out.x0_c.tensor().max_abs_diff(batch.x0_c.tensor()).max(out.x0_d.tensor().max_abs_diff(batch.x0_d.tensor()));
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn sampling_is_deterministic_and_keeps_the_condition_face() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = UNetConfig {
            channels: 4,
            groups: 2,
            temb_dim: 8,
            sync: SyncFlags::ALL,
            ..UNetConfig::default()
        };
        let model = ToyUNet::new(cfg, &mut rng).unwrap();
        let scene = synthetic_scene(n, &mut rng).unwrap();
        let schedule = NoiseSchedule::new(100, Default::default()).unwrap();
        let posenc = xyz_encoding(n).unwrap();
        let run = |face| {
            let mut r = ChaCha8Rng::seed_from_u64(77);
            ddim_sample(&model, &scene.rgb, &scene.depth, face, &schedule, &posenc, 10, &mut r).unwrap()
        };
        let (a, b) = (run(CubeFace::Front), run(CubeFace::Front));
        assert_eq!(a, b);
        assert_eq!(a.rgb.face_slice(CubeFace::Front), scene.rgb.face_slice(CubeFace::Front));
        assert_eq!(a.depth.grid().face_slice(CubeFace::Front), scene.depth.grid().face_slice(CubeFace::Front));
        let c = run(CubeFace::Up);
        assert_eq!(c.rgb.face_slice(CubeFace::Up), scene.rgb.face_slice(CubeFace::Up));
        assert_eq!(a.to_rgbd().unwrap().channels(), 4);
    }

    #[test]
    fn euclidean_condition_is_rejected() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ToyUNet::new(UNetConfig { channels: 4, temb_dim: 8, ..UNetConfig::default() }, &mut rng).unwrap();
        let scene = synthetic_scene(n, &mut rng).unwrap();
        let euclid = crate::depth::z_to_euclidean(&scene.depth).unwrap();
        let schedule = NoiseSchedule::new(100, Default::default()).unwrap();
        let posenc = xyz_encoding(n).unwrap();
        assert!(ddim_sample(&model, &scene.rgb, &euclid, CubeFace::Front, &schedule, &posenc, 5, &mut rng).is_err());
    }
}
