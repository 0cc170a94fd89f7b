use super::multiplane::{planes_to_tokens, tokens_to_planes, MultiPlaneTensor, PLANES};
use super::pad::HaloPlan;
use crate::error::{shape_err, Result};
use crate::geometry::Filter;
use crate::numeric::{attention_raw, conv2d_valid_raw, group_norm, zero_pad, Conv2dKernel, GroupNormSpec, Tensor};

fn conv_planes(padded: &[f64], kernel: &Conv2dKernel, np: usize, n: usize, out: &mut [f64]) {
    let (ci, co, k) = (kernel.c_in(), kernel.c_out(), kernel.size());
    for f in 0..PLANES {
        conv2d_valid_raw(
            &padded[f * ci * np * np..(f + 1) * ci * np * np],
            ci,
            np,
            np,
            kernel.weights().data(),
            kernel.bias().data(),
            co,
            k,
            &mut out[f * co * n * n..(f + 1) * co * n * n],
        );
    }
}

fn check_channels(x: &MultiPlaneTensor, kernel: &Conv2dKernel) -> Result<()> {
    if x.channels() != kernel.c_in() {
        return Err(shape_err(format!(
            "input has {} channels, kernel expects {}",
            x.channels(),
            kernel.c_in()
        )));
    }
    Ok(())
}

/// Convolution whose halo is cube-padded from the adjacent faces. All six
/// faces share the kernel.
pub fn synced_conv2d(x: &MultiPlaneTensor, kernel: &Conv2dKernel) -> Result<MultiPlaneTensor> {
    synced_conv2d_with(x, kernel, Filter::Bilinear)
}

pub fn synced_conv2d_with(x: &MultiPlaneTensor, kernel: &Conv2dKernel, filter: Filter) -> Result<MultiPlaneTensor> {
    check_channels(x, kernel)?;
    let p = kernel.halo();
    let n = x.size();
    let plan = if p > 0 { Some(HaloPlan::new(n, p, filter)?) } else { None };
    let mut out = MultiPlaneTensor::zeros(x.batch(), kernel.c_out(), n);
    for b in 0..x.batch() {
        let padded = match &plan {
            Some(plan) => plan.pad(x.sample(b), x.channels()),
            None => x.sample(b).to_vec(),
        };
        conv_planes(&padded, kernel, n + 2 * p, n, out.sample_mut(b));
    }
    Ok(out)
}

/// Per-face zero-padded convolution, the seam-unaware baseline.
pub fn unsynced_conv2d(x: &MultiPlaneTensor, kernel: &Conv2dKernel) -> Result<MultiPlaneTensor> {
    check_channels(x, kernel)?;
    let p = kernel.halo();
    let (n, c) = (x.size(), x.channels());
    let mut out = MultiPlaneTensor::zeros(x.batch(), kernel.c_out(), n);
    for b in 0..x.batch() {
        let padded = zero_pad(x.sample(b), PLANES * c, n, n, p);
        conv_planes(&padded, kernel, n + 2 * p, n, out.sample_mut(b));
    }
    Ok(out)
}

fn check_qkv(q: &MultiPlaneTensor, k: &MultiPlaneTensor, v: &MultiPlaneTensor, heads: usize) -> Result<()> {
    if q.tensor().shape() != k.tensor().shape() || q.tensor().shape() != v.tensor().shape() {
        return Err(shape_err("q/k/v shapes differ"));
    }
    if heads == 0 || q.channels() % heads != 0 {
        return Err(shape_err(format!("{} channels not divisible by {heads} heads", q.channels())));
    }
    Ok(())
}

/// Attention over one sequence of all `6 * H * W` tokens per batch item,
/// faces concatenated in storage order.
pub fn synced_attention(
    q: &MultiPlaneTensor,
    k: &MultiPlaneTensor,
    v: &MultiPlaneTensor,
    heads: usize,
) -> Result<MultiPlaneTensor> {
    check_qkv(q, k, v, heads)?;
    let (c, hw) = (q.channels(), q.size() * q.size());
    let mut out = MultiPlaneTensor::zeros(q.batch(), c, q.size());
    for b in 0..q.batch() {
        let tq = planes_to_tokens(q.sample(b), PLANES, c, hw);
        let tk = planes_to_tokens(k.sample(b), PLANES, c, hw);
        let tv = planes_to_tokens(v.sample(b), PLANES, c, hw);
        let (o, _) = attention_raw(&tq, &tk, &tv, PLANES * hw, c, heads, false);
        out.sample_mut(b).copy_from_slice(&tokens_to_planes(&o, PLANES, c, hw));
    }
    Ok(out)
}

/// Per-face attention: each face only attends to its own `H * W` tokens.
pub fn unsynced_attention(
    q: &MultiPlaneTensor,
    k: &MultiPlaneTensor,
    v: &MultiPlaneTensor,
    heads: usize,
) -> Result<MultiPlaneTensor> {
    check_qkv(q, k, v, heads)?;
    let (c, hw) = (q.channels(), q.size() * q.size());
    let mut out = MultiPlaneTensor::zeros(q.batch(), c, q.size());
    for b in 0..q.batch() {
        for f in 0..PLANES {
            let r = f * c * hw..(f + 1) * c * hw;
            let tq = planes_to_tokens(&q.sample(b)[r.clone()], 1, c, hw);
            let tk = planes_to_tokens(&k.sample(b)[r.clone()], 1, c, hw);
            let tv = planes_to_tokens(&v.sample(b)[r.clone()], 1, c, hw);
            let (o, _) = attention_raw(&tq, &tk, &tv, hw, c, heads, false);
            out.sample_mut(b)[r].copy_from_slice(&tokens_to_planes(&o, 1, c, hw));
        }
    }
    Ok(out)
}

/// Group norm with statistics pooled over all planes (axes `M, H, W`).
pub fn synced_group_norm(
    x: &MultiPlaneTensor,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<MultiPlaneTensor> {
    let spec = GroupNormSpec {
        channel_axis: 2,
        groups,
        reduce_axes: vec![1, 3, 4],
        eps,
    };
    MultiPlaneTensor::new(group_norm(x.tensor(), &spec, gamma, beta)?)
}

/// Group norm with independent statistics per plane (axes `H, W`).
pub fn per_view_group_norm(
    x: &MultiPlaneTensor,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<MultiPlaneTensor> {
    let spec = GroupNormSpec {
        channel_axis: 2,
        groups,
        reduce_axes: vec![3, 4],
        eps,
    };
    MultiPlaneTensor::new(group_norm(x.tensor(), &spec, gamma, beta)?)
}

/// Lay the six planes side by side into `[B, C, H, 6W]`.
pub fn concat_planes_along_width(x: &MultiPlaneTensor) -> Tensor {
    let (b, c, n) = (x.batch(), x.channels(), x.size());
    let mut out = Tensor::zeros(&[b, c, n, PLANES * n]);
    for bi in 0..b {
        for f in crate::geometry::CubeFace::ALL {
            for ch in 0..c {
                for i in 0..n {
                    for j in 0..n {
                        out.set(&[bi, ch, i, f.index() * n + j], x.get(bi, f, ch, i, j));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotate_yaw90, CubeFace, CubemapGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mpt(b: usize, c: usize, n: usize, rng: &mut ChaCha8Rng) -> MultiPlaneTensor {
        MultiPlaneTensor::new(Tensor::from_fn(&[b, 6, c, n, n], |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn one_by_one_conv_needs_no_halo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_mpt(1, 2, 4, &mut rng);
        let k = Conv2dKernel::new(Tensor::from_fn(&[3, 2, 1, 1], |i| i as f64 - 2.0), Tensor::full(&[3], 0.5)).unwrap();
        assert_eq!(synced_conv2d(&x, &k).unwrap(), unsynced_conv2d(&x, &k).unwrap());
    }

    #[test]
    fn box_on_constant_cube_is_constant() {
        let x = MultiPlaneTensor::new(Tensor::full(&[1, 6, 1, 8, 8], 1.0)).unwrap();
        let k = Conv2dKernel::box_filter(1, 3).unwrap();
        let s = synced_conv2d(&x, &k).unwrap();
        assert!(s.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let u = unsynced_conv2d(&x, &k).unwrap();
        for face in CubeFace::ALL {
            assert!(u.get(0, face, 0, 0, 3) < 1.0);
            assert!(u.get(0, face, 0, 7, 7) < 1.0);
            assert!((u.get(0, face, 0, 3, 3) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn interior_pixels_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_mpt(2, 2, 12, &mut rng);
        let k = Conv2dKernel::new(
            Tensor::from_fn(&[2, 2, 5, 5], |_| rng.random_range(-1.0..1.0)),
            Tensor::from_fn(&[2], |_| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let s = synced_conv2d(&x, &k).unwrap();
        let u = unsynced_conv2d(&x, &k).unwrap();
        for b in 0..2 {
            for face in CubeFace::ALL {
                for c in 0..2 {
                    for i in 0..12 {
                        for j in 0..12 {
                            let interior = (2..10).contains(&i) && (2..10).contains(&j);
                            if interior {
                                assert_eq!(s.get(b, face, c, i, j).to_bits(), u.get(b, face, c, i, j).to_bits());
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn attention_matches_concatenation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (random_mpt(2, 4, 3, &mut rng), random_mpt(2, 4, 3, &mut rng), random_mpt(2, 4, 3, &mut rng));
        let got = synced_attention(&q, &k, &v, 2).unwrap();
        let to_seq = |x: &MultiPlaneTensor| {
            let mut t = Tensor::zeros(&[2, 54, 4]);
            for b in 0..2 {
                for face in CubeFace::ALL {
                    for i in 0..3 {
                        for j in 0..3 {
                            for c in 0..4 {
                                t.set(&[b, face.index() * 9 + i * 3 + j, c], x.get(b, face, c, i, j));
                            }
                        }
                    }
                }
            }
            t
        };
        let oracle = crate::numeric::attention(&to_seq(&q), &to_seq(&k), &to_seq(&v), 2).unwrap();
        assert!(to_seq(&got).max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn attention_on_replicated_face_equals_single_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = random_mpt(1, 4, 3, &mut rng);
        let mut rep = one.clone();
        let face0 = one.plane(0, CubeFace::Front).to_vec();
        for face in CubeFace::ALL {
            rep.plane_mut(0, face).copy_from_slice(&face0);
        }
        let synced = synced_attention(&rep, &rep, &rep, 2).unwrap();
        let single = unsynced_attention(&rep, &rep, &rep, 2).unwrap();
        let diff = synced.tensor().max_abs_diff(single.tensor());
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn attention_is_face_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_mpt(1, 2, 2, &mut rng);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut px = x.clone();
        for (dst, &src) in perm.iter().enumerate() {
            let s = x.plane(0, CubeFace::ALL[src]).to_vec();
            px.plane_mut(0, CubeFace::ALL[dst]).copy_from_slice(&s);
        }
        let y = synced_attention(&x, &x, &x, 1).unwrap();
        let py = synced_attention(&px, &px, &px, 1).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            let a = py.plane(0, CubeFace::ALL[dst]);
            let b = y.plane(0, CubeFace::ALL[src]);
            assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-14));
        }
    }

    #[test]
    fn group_norm_matches_width_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_mpt(2, 4, 5, &mut rng);
        let gamma = [1.1, 0.9, 1.3, 0.7];
        let beta = [0.1, -0.1, 0.0, 0.3];
        let got = synced_group_norm(&x, 2, &gamma, &beta, 1e-5).unwrap();
        let wide = concat_planes_along_width(&x);
        let spec = GroupNormSpec {
            channel_axis: 1,
            groups: 2,
            reduce_axes: vec![2, 3],
            eps: 1e-5,
        };
        let oracle = group_norm(&wide, &spec, &gamma, &beta).unwrap();
        assert!(concat_planes_along_width(&got).max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn constant_cube_normalizes_to_zero() {
        let x = MultiPlaneTensor::new(Tensor::full(&[1, 6, 2, 4, 4], 3.0)).unwrap();
        let y = synced_group_norm(&x, 1, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synced_norm_keeps_between_face_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = random_mpt(1, 2, 4, &mut rng);
        for face in CubeFace::ALL {
            x.plane_mut(0, face).iter_mut().for_each(|v| *v = *v * 0.1 + face.index() as f64);
        }
        let face_means = |y: &MultiPlaneTensor| -> Vec<f64> {
            CubeFace::ALL.iter().map(|&f| y.plane(0, f).iter().sum::<f64>() / 32.0).collect()
        };
        let synced = face_means(&synced_group_norm(&x, 1, &[1.0; 2], &[0.0; 2], 1e-5).unwrap());
        assert!(synced.windows(2).all(|w| w[0] < w[1]));
        let per_view = face_means(&per_view_group_norm(&x, 1, &[1.0; 2], &[0.0; 2], 1e-5).unwrap());
        assert!(per_view.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn synced_norm_commutes_with_yaw_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cube = CubemapGrid::from_data(5, 4, (0..6 * 4 * 25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let gamma = [1.0, 2.0, 0.5, 1.5];
        let beta = [0.0, 0.1, 0.2, 0.3];
        let norm = |c: &CubemapGrid| {
            synced_group_norm(&MultiPlaneTensor::from_cubemaps(&[c.clone()]).unwrap(), 2, &gamma, &beta, 1e-5)
                .unwrap()
                .to_cubemap(0)
        };
        let a = norm(&rotate_yaw90(&cube));
        let b = rotate_yaw90(&norm(&cube));
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // Summation order differs after the permutation, so allow rounding.
        assert!(diff < 1e-13, "{diff}");
    }
}
