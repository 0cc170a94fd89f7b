//! Synchronization ablation: train the same network with and without
//! multi-plane sync on identical data and compare the seams of its samples.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::synthetic_batch;
use super::sample::ddim_sample_latents;
use super::train::{train, TrainConfig};
use super::unet::ToyUNet;
use crate::depth::INFERENCE_RESCALE_S;
use crate::error::Result;
use crate::geometry::CubeFace;
use crate::metrics::seam_discontinuity;
use crate::numeric::Tensor;
use crate::sync::{MultiPlaneTensor, SyncFlags, PLANES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Shared by both arms; its `unet.sync` is overridden per arm.
    pub train: TrainConfig,
    pub samples: usize,
    pub sample_steps: usize,
    pub sample_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                iterations: 500,
                lr: 0.4,
                ..TrainConfig::default()
            },
            samples: 16,
            sample_steps: 50,
            sample_seed: 1234,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmReport {
    pub sync: SyncFlags,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `1 - final / initial`.
    pub loss_decrease: f64,
    /// Mean and max cross-seam jump of the sampled latents, both blocks.
    pub seam_mean: f64,
    pub seam_max: f64,
    pub train_seconds: f64,
    pub sample_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub synced: ArmReport,
    pub unsynced: ArmReport,
}

/// Sample `config.samples` panoramas conditioned on held-out Front faces and
/// measure their seams. Both blocks are stacked channel-wise for the metric.
pub fn sample_seams(model: &ToyUNet, config: &AblationConfig) -> Result<(f64, f64)> {
    let n = config.train.face_size;
    let schedule = super::schedule::NoiseSchedule::new(config.train.timesteps, Default::default())?;
    let posenc = crate::encoding::xyz_encoding(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.sample_seed);
    let cond = synthetic_batch(config.samples, n, CubeFace::Front, &mut rng, |_| INFERENCE_RESCALE_S)?;
    let out = ddim_sample_latents(model, &cond.x0_c, &cond.x0_d, cond.mask, &schedule, &posenc, config.sample_steps, &mut rng, |_| {})?;
    let per = 4 * n * n;
    let mut data = Vec::with_capacity(2 * out.x0_c.data().len());
    for b in 0..config.samples {
        for f in 0..PLANES {
            data.extend_from_slice(&out.x0_c.sample(b)[f * per..(f + 1) * per]);
            data.extend_from_slice(&out.x0_d.sample(b)[f * per..(f + 1) * per]);
        }
    }
    let stacked = MultiPlaneTensor::new(Tensor::from_vec(&[config.samples, PLANES, 8, n, n], data)?)?;
    let r = seam_discontinuity(&stacked);
    Ok((r.mean, r.max))
}

/// Train one variant with `config.train` and measure its samples.
pub fn ablation_arm(config: &AblationConfig, sync: SyncFlags, log: &mut dyn FnMut(&str)) -> Result<ArmReport> {
    let mut tc = config.train;
    tc.unet.sync = sync;
    let t0 = Instant::now();
    let outcome = train(tc, |i, l| {
        if i % 50 == 0 {
            log(&format!("sync={sync:?} iter {i} loss {l:.4}"));
        }
    })?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (seam_mean, seam_max) = sample_seams(&outcome.model, config)?;
    Ok(ArmReport {
        sync,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        loss_decrease: 1.0 - outcome.final_loss / outcome.initial_loss,
        seam_mean,
        seam_max,
        train_seconds,
        sample_seconds: t1.elapsed().as_secs_f64(),
    })
}

/// Train and sample both arms with the same seeds.
pub fn sync_ablation(config: AblationConfig, mut log: impl FnMut(&str)) -> Result<AblationReport> {
    let synced = ablation_arm(&config, SyncFlags::ALL, &mut log)?;
    let unsynced = ablation_arm(&config, SyncFlags::NONE, &mut log)?;
    Ok(AblationReport { config, synced, unsynced })
}
