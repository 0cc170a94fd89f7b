use super::schedule::NoiseSchedule;
use crate::encoding::PositionalEncoding;
use crate::error::{invalid, shape_err, Result};
use crate::geometry::CubeFace;
use crate::numeric::Tensor;
use crate::sync::{MultiPlaneTensor, PLANES};

/// Channels of each latent block: `[R, G, B, 0]` for the image and
/// `[Z, Z, Z, 0]` for depth.
pub const IMG_CHANNELS: usize = 4;
/// Network input: image block, depth block, XYZ encoding, mask.
pub const INPUT_CHANNELS: usize = 2 * IMG_CHANNELS + 3 + 1;
/// Network output: predicted `v` for the image and depth blocks.
pub const OUTPUT_CHANNELS: usize = 2 * IMG_CHANNELS;

/// Per-face mask: `true` means the face is generated, `false` that it is a
/// noise-free condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceMask(pub [bool; PLANES]);

impl FaceMask {
    /// Generate everything except `condition`.
    pub fn conditioned_on(condition: CubeFace) -> Self {
        let mut m = [true; PLANES];
        m[condition.index()] = false;
        Self(m)
    }

    pub fn is_generated(&self, face: usize) -> bool {
        self.0[face]
    }

    pub fn generated_count(&self) -> usize {
        self.0.iter().filter(|&&g| g).count()
    }

    /// `[batch, 6, 1, n, n]` tensor of ones (generated) and zeros.
    pub fn to_tensor(&self, batch: usize, size: usize) -> MultiPlaneTensor {
        let plane = size * size;
        let mut t = MultiPlaneTensor::zeros(batch, 1, size);
        for b in 0..batch {
            for f in 0..PLANES {
                let v = if self.0[f] { 1.0 } else { 0.0 };
                t.sample_mut(b)[f * plane..(f + 1) * plane].fill(v);
            }
        }
        t
    }

    /// Read a mask tensor back, failing unless it is constant 0 or 1 per
    /// face and identical across the batch.
    pub fn from_tensor(t: &MultiPlaneTensor) -> Result<Self> {
        if t.channels() != 1 {
            return Err(shape_err(format!("mask needs 1 channel, got {}", t.channels())));
        }
        let plane = t.size() * t.size();
        let mut m = [false; PLANES];
        for (f, slot) in m.iter_mut().enumerate() {
            let first = t.sample(0)[f * plane];
            if first != 0.0 && first != 1.0 {
                return Err(invalid(format!("mask value {first} is not 0 or 1")));
            }
            for b in 0..t.batch() {
                if t.sample(b)[f * plane..(f + 1) * plane].iter().any(|&v| v != first) {
                    return Err(invalid(format!("mask is not constant on face {f}")));
                }
            }
            *slot = first == 1.0;
        }
        Ok(Self(m))
    }
}

/// Noisy latents plus everything the network sees besides them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub z_c: MultiPlaneTensor,
    pub z_d: MultiPlaneTensor,
    pub mask: FaceMask,
    pub posenc: PositionalEncoding,
    /// One timestep per batch item.
    pub t: Vec<usize>,
}

fn check_block(x: &MultiPlaneTensor, what: &str) -> Result<()> {
    if x.channels() != IMG_CHANNELS {
        return Err(shape_err(format!("{what} needs {IMG_CHANNELS} channels, got {}", x.channels())));
    }
    Ok(())
}

/// Noise the generated faces to timestep `t[b]`; condition faces are copied
/// from `x0` unchanged.
#[allow(clippy::too_many_arguments)]
pub fn masked_noise_inject(
    x0_c: &MultiPlaneTensor,
    x0_d: &MultiPlaneTensor,
    mask: &MultiPlaneTensor,
    t: &[usize],
    eps_c: &MultiPlaneTensor,
    eps_d: &MultiPlaneTensor,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
) -> Result<DiffusionState> {
    let mask = FaceMask::from_tensor(mask)?;
    inject(x0_c, x0_d, mask, t, eps_c, eps_d, schedule, posenc)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn inject(
    x0_c: &MultiPlaneTensor,
    x0_d: &MultiPlaneTensor,
    mask: FaceMask,
    t: &[usize],
    eps_c: &MultiPlaneTensor,
    eps_d: &MultiPlaneTensor,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
) -> Result<DiffusionState> {
    check_block(x0_c, "image block")?;
    check_block(x0_d, "depth block")?;
    let shape = x0_c.tensor().shape();
    if x0_d.tensor().shape() != shape || eps_c.tensor().shape() != shape || eps_d.tensor().shape() != shape {
        return Err(shape_err("latent and noise shapes differ"));
    }
    if t.len() != x0_c.batch() {
        return Err(shape_err(format!("{} timesteps for batch of {}", t.len(), x0_c.batch())));
    }
    if posenc.face_size() != x0_c.size() {
        return Err(shape_err("positional encoding size differs from latents"));
    }
    let noisy = |x0: &MultiPlaneTensor, eps: &MultiPlaneTensor| {
        let mut z = x0.clone();
        let per_face = IMG_CHANNELS * x0.size() * x0.size();
        for (b, &tb) in t.iter().enumerate() {
            let (a, s) = (schedule.alpha(tb), schedule.sigma(tb));
            let e = eps.sample(b);
            let zs = z.sample_mut(b);
            for f in (0..PLANES).filter(|&f| mask.is_generated(f)) {
                for k in f * per_face..(f + 1) * per_face {
                    zs[k] = a * zs[k] + s * e[k];
                }
            }
        }
        z
    };
    Ok(DiffusionState {
        z_c: noisy(x0_c, eps_c),
        z_d: noisy(x0_d, eps_d),
        mask,
        posenc: posenc.clone(),
        t: t.to_vec(),
    })
}

/// Channel stack `[z_c (4) | z_d (4) | xyz (3) | mask (1)]` per face.
pub fn assemble_input(state: &DiffusionState) -> Result<MultiPlaneTensor> {
    let (bsz, n) = (state.z_c.batch(), state.z_c.size());
    if state.posenc.data.channels() != 3 {
        return Err(shape_err("input assembly needs the 3-channel XYZ encoding"));
    }
    let plane = n * n;
    let mut out = MultiPlaneTensor::zeros(bsz, INPUT_CHANNELS, n);
    let pe = state.posenc.data.sample(0);
    for b in 0..bsz {
        let (zc, zd) = (state.z_c.sample(b), state.z_d.sample(b));
        let dst = out.sample_mut(b);
        for f in 0..PLANES {
            let base = f * INPUT_CHANNELS * plane;
            let blk = IMG_CHANNELS * plane;
            dst[base..base + blk].copy_from_slice(&zc[f * blk..(f + 1) * blk]);
            dst[base + blk..base + 2 * blk].copy_from_slice(&zd[f * blk..(f + 1) * blk]);
            dst[base + 2 * blk..base + 2 * blk + 3 * plane].copy_from_slice(&pe[f * 3 * plane..(f + 1) * 3 * plane]);
            let m = if state.mask.is_generated(f) { 1.0 } else { 0.0 };
            dst[base + 2 * blk + 3 * plane..base + INPUT_CHANNELS * plane].fill(m);
        }
    }
    Ok(out)
}

/// Copy channels `range` of every plane into a new multi-plane tensor.
pub fn slice_channels(x: &MultiPlaneTensor, range: std::ops::Range<usize>) -> MultiPlaneTensor {
    let (bsz, c, n) = (x.batch(), x.channels(), x.size());
    let plane = n * n;
    let k = range.len();
    let mut data = Vec::with_capacity(bsz * PLANES * k * plane);
    for b in 0..bsz {
        for f in 0..PLANES {
            let base = f * c * plane;
            data.extend_from_slice(&x.sample(b)[base + range.start * plane..base + range.end * plane]);
        }
    }
    MultiPlaneTensor::new(Tensor::from_vec(&[bsz, PLANES, k, n, n], data).expect("sizes agree")).expect("valid layout")
}
