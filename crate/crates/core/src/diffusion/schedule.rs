use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Betas evenly spaced from `1e-4` to `2e-2`.
    #[default]
    Linear,
}

pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 2e-2;

/// Discrete diffusion schedule over timesteps `1..=T`. Timestep 0 is the
/// clean signal (`alpha = 1`, `sigma = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(timesteps: usize, kind: ScheduleKind) -> Result<Self> {
        if timesteps < 2 {
            return Err(invalid(format!("schedule needs at least 2 timesteps, got {timesteps}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..timesteps)
                .map(|i| {
                    LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (timesteps - 1) as f64
                })
                .collect(),
        };
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alphas_cumprod })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative signal fraction `alpha_bar_t`; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_cumprod[t - 1]
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// `steps` evenly spaced timesteps from `T` down to `T / steps`; the
    /// sampler steps from the last one to 0.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.timesteps();
        if steps == 0 || steps > t {
            return Err(invalid(format!("sampling steps must be in 1..={t}, got {steps}")));
        }
        Ok((1..=steps).rev().map(|i| i * t / steps).collect())
    }
}

pub fn make_schedule(timesteps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    NoiseSchedule::new(timesteps, kind)
}

/// `v = alpha * eps - sigma * x0`.
pub fn v_target(x0: &[f64], eps: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
    x0.iter().zip(eps).map(|(x, e)| alpha * e - sigma * x).collect()
}

/// `x0 = alpha * z - sigma * v`.
pub fn reconstruct_x0(z: &[f64], v: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
    z.iter().zip(v).map(|(z, v)| alpha * z - sigma * v).collect()
}

/// `eps = sigma * z + alpha * v`.
pub fn reconstruct_eps(z: &[f64], v: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
    z.iter().zip(v).map(|(z, v)| sigma * z + alpha * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn linear_schedule_values() {
        let s = make_schedule(1000, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
        assert!(s.alpha_bar(1000) < 0.01);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        for t in 1..1000 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        for t in 0..=1000 {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
        }
        assert!(make_schedule(1, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn ddim_timesteps_cover_the_range() {
        let s = make_schedule(1000, ScheduleKind::Linear).unwrap();
        let ts = s.ddim_timesteps(50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!((ts[0], ts[49]), (1000, 20));
        assert_eq!(s.ddim_timesteps(1000).unwrap(), (1..=1000).rev().collect::<Vec<_>>());
        assert!(s.ddim_timesteps(0).is_err());
    }

    #[test]
    fn sigma_zero_gives_v_equal_eps() {
        let v = v_target(&[0.3, -2.0], &[1.5, 0.25], 1.0, 0.0);
        assert_eq!(v, vec![1.5, 0.25]);
    }

    #[test]
    fn reconstructions_invert_the_target() {
        let s = make_schedule(1000, ScheduleKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = rng.random_range(1..=1000);
            let (a, sg) = (s.alpha(t), s.sigma(t));
            let x0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let z: Vec<f64> = x0.iter().zip(&eps).map(|(x, e)| a * x + sg * e).collect();
            let v = v_target(&x0, &eps, a, sg);
            for (r, x) in reconstruct_x0(&z, &v, a, sg).iter().zip(&x0) {
                assert!((r - x).abs() < 1e-10);
            }
            for (r, e) in reconstruct_eps(&z, &v, a, sg).iter().zip(&eps) {
                assert!((r - e).abs() < 1e-10);
            }
        }
    }
}
