use super::Tensor;
use crate::error::{invalid, shape_err, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Which axes a group normalization pools over.
///
/// Statistics are computed per `(kept axes, group)`, where a group is a
/// contiguous block of `channels / groups` channels and the kept axes are
/// every axis that is neither the channel axis nor in `reduce_axes`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormSpec {
    pub channel_axis: usize,
    pub groups: usize,
    pub reduce_axes: Vec<usize>,
    pub eps: f64,
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` with biased variance.
pub fn group_norm(x: &Tensor, spec: &GroupNormSpec, gamma: &[f64], beta: &[f64]) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    if spec.channel_axis >= rank || spec.reduce_axes.iter().any(|&a| a >= rank || a == spec.channel_axis) {
        return Err(invalid(format!(
            "bad axes: channel {} / reduce {:?} for rank {rank}",
            spec.channel_axis, spec.reduce_axes
        )));
    }
    let channels = shape[spec.channel_axis];
    if spec.groups == 0 || channels % spec.groups != 0 {
        return Err(invalid(format!("{channels} channels not divisible into {} groups", spec.groups)));
    }
    if gamma.len() != channels || beta.len() != channels {
        return Err(shape_err(format!("gamma/beta must have {channels} entries")));
    }
    let per_group = channels / spec.groups;

    // Kept-axis strides for the statistics key.
    let kept: Vec<usize> = (0..rank)
        .filter(|a| *a != spec.channel_axis && !spec.reduce_axes.contains(a))
        .collect();
    let n_kept: usize = kept.iter().map(|&a| shape[a]).product();
    let n_stats = n_kept * spec.groups;

    let strides = x.strides();
    let key_and_channel = |flat: usize| {
        let mut key = 0;
        for &a in &kept {
            key = key * shape[a] + (flat / strides[a]) % shape[a];
        }
        let c = (flat / strides[spec.channel_axis]) % channels;
        (key * spec.groups + c / per_group, c)
    };

    let mut sum = vec![0.0; n_stats];
    let mut count = vec![0usize; n_stats];
    for (k, &v) in x.data().iter().enumerate() {
        let (s, _) = key_and_channel(k);
        sum[s] += v;
        count[s] += 1;
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0; n_stats];
    for (k, &v) in x.data().iter().enumerate() {
        let (s, _) = key_and_channel(k);
        let d = v - mean[s];
        sq[s] += d * d;
    }
    let inv_std: Vec<f64> = sq
        .iter()
        .zip(&count)
        .map(|(q, &n)| 1.0 / (q / n as f64 + spec.eps).sqrt())
        .collect();

    let mut out = x.clone();
    for (k, o) in out.data_mut().iter_mut().enumerate() {
        let (s, c) = key_and_channel(k);
        *o = gamma[c] * ((*o - mean[s]) * inv_std[s]) + beta[c];
    }
    Ok(out)
}

/// Cached statistics of [`group_norm_mchw`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Group norm on one sample laid out as `[M, C, HW]`. With `across_planes`
/// the statistics pool all `M` planes; otherwise each plane is normalized
/// on its own.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_mchw(
    x: &[f64],
    m: usize,
    c: usize,
    hw: usize,
    groups: usize,
    across_planes: bool,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, GroupNormCache) {
    let per_group = c / groups;
    let n_stats = if across_planes { groups } else { m * groups };
    let stat = |plane: usize, g: usize| if across_planes { g } else { plane * groups + g };
    let count = (per_group * hw * if across_planes { m } else { 1 }) as f64;

    let mut mean = vec![0.0; n_stats];
    for p in 0..m {
        for ch in 0..c {
            let s = stat(p, ch / per_group);
            mean[s] += x[(p * c + ch) * hw..(p * c + ch + 1) * hw].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);
    let mut var = vec![0.0; n_stats];
    for p in 0..m {
        for ch in 0..c {
            let s = stat(p, ch / per_group);
            let mu = mean[s];
            var[s] += x[(p * c + ch) * hw..(p * c + ch + 1) * hw]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / count + eps).sqrt()).collect();

    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for p in 0..m {
        for ch in 0..c {
            let s = stat(p, ch / per_group);
            let r = (p * c + ch) * hw..(p * c + ch + 1) * hw;
            for k in r {
                let h = (x[k] - mean[s]) * inv_std[s];
                xhat[k] = h;
                y[k] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, GroupNormCache { xhat, inv_std })
}

/// Backward of [`group_norm_mchw`]; accumulates into `dgamma`/`dbeta`.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_mchw_backward(
    cache: &GroupNormCache,
    dy: &[f64],
    m: usize,
    c: usize,
    hw: usize,
    groups: usize,
    across_planes: bool,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let per_group = c / groups;
    let n_stats = if across_planes { groups } else { m * groups };
    let stat = |plane: usize, g: usize| if across_planes { g } else { plane * groups + g };
    let count = (per_group * hw * if across_planes { m } else { 1 }) as f64;

    let mut sum_g = vec![0.0; n_stats];
    let mut sum_gx = vec![0.0; n_stats];
    for p in 0..m {
        for ch in 0..c {
            let s = stat(p, ch / per_group);
            let r = (p * c + ch) * hw..(p * c + ch + 1) * hw;
            let (mut dg, mut db, mut sg, mut sgx) = (0.0, 0.0, 0.0, 0.0);
            for k in r {
                let xh = cache.xhat[k];
                dg += dy[k] * xh;
                db += dy[k];
                let g = dy[k] * gamma[ch];
                sg += g;
                sgx += g * xh;
            }
            dgamma[ch] += dg;
            dbeta[ch] += db;
            sum_g[s] += sg;
            sum_gx[s] += sgx;
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for p in 0..m {
        for ch in 0..c {
            let s = stat(p, ch / per_group);
            let (mg, mgx, is) = (sum_g[s] / count, sum_gx[s] / count, cache.inv_std[s]);
            for k in (p * c + ch) * hw..(p * c + ch + 1) * hw {
                dx[k] = is * (dy[k] * gamma[ch] - mg - cache.xhat[k] * mgx);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(groups: usize, reduce: &[usize]) -> GroupNormSpec {
        GroupNormSpec {
            channel_axis: 1,
            groups,
            reduce_axes: reduce.to_vec(),
            eps: DEFAULT_EPS,
        }
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[2, 4, 3, 3], 7.5);
        let y = group_norm(&x, &spec(2, &[2, 3]), &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[1, 4, 5], |_| rng.random_range(-3.0..3.0));
        let beta = [0.1, -0.2, 0.3, 0.4];
        let y = group_norm(&x, &spec(2, &[2]), &[0.0; 4], &beta).unwrap();
        for c in 0..4 {
            for k in 0..5 {
                assert_eq!(y.get(&[0, c, k]), beta[c]);
            }
        }
    }

    #[test]
    fn rejects_indivisible_groups() {
        let x = Tensor::zeros(&[1, 6, 2]);
        assert!(group_norm(&x, &spec(4, &[2]), &[1.0; 6], &[0.0; 6]).is_err());
    }

    #[test]
    fn matches_two_pass_oracle_and_unit_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, c, h, w, g) = (2, 6, 4, 5, 3);
        let x = Tensor::from_fn(&[b, c, h, w], |_| rng.random_range(-2.0..5.0));
        let y = group_norm(&x, &spec(g, &[2, 3]), &[1.0; 6], &[0.0; 6]).unwrap();
        let per = c / g;
        for bi in 0..b {
            for gi in 0..g {
                let vals: Vec<f64> = (gi * per..(gi + 1) * per)
                    .flat_map(|ch| (0..h * w).map(move |k| (ch, k)))
                    .map(|(ch, k)| x.get(&[bi, ch, k / w, k % w]))
                    .collect();
                let n = vals.len() as f64;
                let mu = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                let mut ys = Vec::new();
                for ch in gi * per..(gi + 1) * per {
                    for k in 0..h * w {
                        let expect = (x.get(&[bi, ch, k / w, k % w]) - mu) / (var + DEFAULT_EPS).sqrt();
                        let got = y.get(&[bi, ch, k / w, k % w]);
                        assert!((got - expect).abs() < 1e-12);
                        ys.push(got);
                    }
                }
                let ym = ys.iter().sum::<f64>() / n;
                let yv = ys.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / n;
                assert!(ym.abs() < 1e-8);
                assert!((yv * (var + DEFAULT_EPS) / var - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn slice_version_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, c, hw, g) = (6, 4, 9, 2);
        let x = Tensor::from_fn(&[m, c, hw], |_| rng.random_range(-1.0..1.0));
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        for (across, reduce) in [(true, vec![0, 2]), (false, vec![2])] {
            let generic = group_norm(&x, &spec(g, &reduce), &gamma, &beta).unwrap();
            let (fast, _) = group_norm_mchw(x.data(), m, c, hw, g, across, &gamma, &beta, DEFAULT_EPS);
            let diff = generic.data().iter().zip(&fast).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, c, hw, g) = (3, 4, 5, 2);
        let x: Vec<f64> = (0..m * c * hw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta = vec![0.1; c];
        for across in [true, false] {
            let loss = |x: &[f64], gamma: &[f64]| {
                let (y, _) = group_norm_mchw(x, m, c, hw, g, across, gamma, &beta, DEFAULT_EPS);
                y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = group_norm_mchw(&x, m, c, hw, g, across, &gamma, &beta, DEFAULT_EPS);
            let mut dg = vec![0.0; c];
            let mut db = vec![0.0; c];
            let dx = group_norm_mchw_backward(&cache, &r, m, c, hw, g, across, &gamma, &mut dg, &mut db);
            let h = 1e-6;
            for idx in [0, 13, 29, x.len() - 1] {
                let mut p = x.clone();
                p[idx] += h;
                let mut q = x.clone();
                q[idx] -= h;
                let fd = (loss(&p, &gamma) - loss(&q, &gamma)) / (2.0 * h);
                assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
            }
            for idx in 0..c {
                let mut p = gamma.clone();
                p[idx] += h;
                let mut q = gamma.clone();
                q[idx] -= h;
                let fd = (loss(&x, &p) - loss(&x, &q)) / (2.0 * h);
                assert!((fd - dg[idx]).abs() < 1e-6);
            }
        }
    }
}
