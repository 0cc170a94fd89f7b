//! Plain gradient-descent training on synthetic panoramas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{synthetic_batch, TrainBatch};
use super::schedule::{v_target, NoiseSchedule, ScheduleKind};
use super::state::{assemble_input, inject, IMG_CHANNELS};
use super::unet::{Grads, LossTarget, ToyUNet, UNetConfig};
use crate::depth::sample_rescale_s;
use crate::encoding::{xyz_encoding, PositionalEncoding};
use crate::error::{invalid, Error, Result};
use crate::geometry::CubeFace;
use crate::numeric::Tensor;
use crate::sync::MultiPlaneTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub face_size: usize,
    pub timesteps: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub clip: Option<f64>,
    pub seed: u64,
    pub unet: UNetConfig,
    /// Size of the fixed held-out batch the eval loss is measured on.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            face_size: 32,
            timesteps: 1000,
            iterations: 300,
            batch: 4,
            lr: 0.05,
            weight_decay: 0.0,
            clip: Some(1.0),
            seed: 0,
            unet: UNetConfig::default(),
            eval_batch: 8,
        }
    }
}

fn gaussian_like(x: &MultiPlaneTensor, rng: &mut impl Rng) -> Result<MultiPlaneTensor> {
    let data = (0..x.data().len()).map(|_| rng.sample(StandardNormal)).collect();
    MultiPlaneTensor::new(Tensor::from_vec(x.tensor().shape(), data)?)
}

/// Loss and gradients for fixed timesteps and noise. The loss is the mean
/// squared `v` error over generated faces, image term plus depth term.
#[allow(clippy::too_many_arguments)]
pub fn loss_for_noise(
    model: &ToyUNet,
    batch: &TrainBatch,
    t: &[usize],
    eps_c: &MultiPlaneTensor,
    eps_d: &MultiPlaneTensor,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
    want_grad: bool,
) -> Result<(f64, Option<Grads>)> {
    let state = inject(&batch.x0_c, &batch.x0_d, batch.mask, t, eps_c, eps_d, schedule, posenc)?;
    let input = assemble_input(&state)?;
    let (bsz, n) = (batch.batch(), batch.size());
    let gen = batch.mask.generated_count();
    if gen == 0 {
        return Err(invalid("mask leaves no face to generate"));
    }
    let denom = (bsz * gen * IMG_CHANNELS * n * n) as f64;
    let per_item: Vec<Result<(f64, Option<Grads>)>> = (0..bsz)
        .into_par_iter()
        .map(|b| {
            let (a, s) = (schedule.alpha(t[b]), schedule.sigma(t[b]));
            let v_c = v_target(batch.x0_c.sample(b), eps_c.sample(b), a, s);
            let v_d = v_target(batch.x0_d.sample(b), eps_d.sample(b), a, s);
            let target = LossTarget {
                v_c: &v_c,
                v_d: &v_d,
                mask: batch.mask,
                denom,
            };
            model.loss_and_grad(input.sample(b), t[b], n, &target, want_grad)
        })
        .collect();
    // Fixed-order reduction keeps results independent of thread timing.
    let mut loss = 0.0;
    let mut grads: Option<Grads> = None;
    for r in per_item {
        let (l, g) = r?;
        loss += l;
        match (&mut grads, g) {
            (None, g) => grads = g,
            (Some(acc), Some(g)) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            (Some(_), None) => {}
        }
    }
    Ok((loss, grads))
}

/// One stochastic loss evaluation: `t ~ U{1..T}` and fresh Gaussian noise.
pub fn training_loss<R: Rng + ?Sized>(
    model: &ToyUNet,
    batch: &TrainBatch,
    schedule: &NoiseSchedule,
    posenc: &PositionalEncoding,
    rng: &mut R,
) -> Result<(f64, Grads)> {
    let t: Vec<usize> = (0..batch.batch()).map(|_| rng.random_range(1..=schedule.timesteps())).collect();
    let mut r = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let eps_c = gaussian_like(&batch.x0_c, &mut r)?;
    let eps_d = gaussian_like(&batch.x0_d, &mut r)?;
    let (loss, g) = loss_for_noise(model, batch, &t, &eps_c, &eps_d, schedule, posenc, true)?;
    Ok((loss, g.expect("gradients requested")))
}

/// Held-out batch with frozen timesteps and noise, so successive
/// evaluations are directly comparable.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub batch: TrainBatch,
    pub t: Vec<usize>,
    pub eps_c: MultiPlaneTensor,
    pub eps_d: MultiPlaneTensor,
}

impl EvalSet {
    /// Timesteps are stratified over `1..=T` so every noise level is seen.
    pub fn new<R: Rng + ?Sized>(size: usize, face_size: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Self> {
        if size == 0 {
            return Err(invalid("eval set must not be empty"));
        }
        let batch = synthetic_batch(size, face_size, CubeFace::Front, rng, |r| sample_rescale_s(r))?;
        let tt = schedule.timesteps();
        let t = (0..size).map(|i| 1 + ((2 * i + 1) * tt) / (2 * size)).map(|v| v.min(tt)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let eps_c = gaussian_like(&batch.x0_c, &mut r)?;
        let eps_d = gaussian_like(&batch.x0_d, &mut r)?;
        Ok(Self { batch, t, eps_c, eps_d })
    }

    pub fn loss(&self, model: &ToyUNet, schedule: &NoiseSchedule, posenc: &PositionalEncoding) -> Result<f64> {
        Ok(loss_for_noise(model, &self.batch, &self.t, &self.eps_c, &self.eps_d, schedule, posenc, false)?.0)
    }
}

/// Gradient-descent state for one model.
pub struct Trainer {
    pub model: ToyUNet,
    pub schedule: NoiseSchedule,
    pub posenc: PositionalEncoding,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !(config.lr > 0.0) {
            return Err(invalid(format!("learning rate {} must be positive", config.lr)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = ToyUNet::new(config.unet, &mut rng)?;
        Ok(Self {
            model,
            schedule: NoiseSchedule::new(config.timesteps, ScheduleKind::Linear)?,
            posenc: xyz_encoding(config.face_size)?,
            config,
            rng,
        })
    }

    /// Draw a fresh batch, take one descent step, and return the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let batch = synthetic_batch(self.config.batch, self.config.face_size, CubeFace::Front, &mut self.rng, |r| sample_rescale_s(r))?;
        let (loss, mut grads) = training_loss(&self.model, &batch, &self.schedule, &self.posenc, &mut self.rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "loss".into(),
                detail: format!("batch loss {loss}"),
            });
        }
        apply_update(&mut self.model, &mut grads, &self.config);
        Ok(loss)
    }
}

/// `p <- p (1 - lr wd) - lr g`, after optional global-norm clipping.
pub fn apply_update(model: &mut ToyUNet, grads: &mut Grads, config: &TrainConfig) {
    if let Some(max) = config.clip {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let k = max / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= k);
        }
    }
    let decay = 1.0 - config.lr * config.weight_decay;
    for (p, g) in model.params_mut().iter_mut().zip(grads.iter()) {
        for (w, d) in p.data.iter_mut().zip(g) {
            *w = *w * decay - config.lr * d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyUNet,
    /// Eval loss of the untrained model.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Per-iteration batch losses.
    pub history: Vec<f64>,
}

/// Train for `config.iterations` steps, measuring the held-out loss before
/// and after.
pub fn train(config: TrainConfig, mut progress: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
    let eval = EvalSet::new(config.eval_batch, config.face_size, &trainer.schedule, &mut eval_rng)?;
    let initial_loss = eval.loss(&trainer.model, &trainer.schedule, &trainer.posenc)?;
    let mut history = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations {
        let l = trainer.step()?;
        progress(i, l);
        history.push(l);
    }
    let final_loss = eval.loss(&trainer.model, &trainer.schedule, &trainer.posenc)?;
    Ok(TrainOutcome {
        model: trainer.model,
        initial_loss,
        final_loss,
        history,
    })
}
