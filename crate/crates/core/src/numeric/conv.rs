use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Convolution weights `[C_out, C_in, k, k]` and bias `[C_out]`, `k` odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dKernel {
    weights: Tensor,
    bias: Tensor,
}

impl Conv2dKernel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let &[c_out, _, kh, kw] = weights.shape() else {
            return Err(shape_err(format!("kernel weights must be [C_out, C_in, k, k], got {:?}", weights.shape())));
        };
        if kh != kw || !matches!(kh, 1 | 3 | 5 | 7) {
            return Err(invalid(format!("kernel size must be 1, 3, 5 or 7 and square, got {kh}x{kw}")));
        }
        if bias.shape() != [c_out] {
            return Err(shape_err(format!("bias must be [{c_out}], got {:?}", bias.shape())));
        }
        Ok(Self { weights, bias })
    }

    /// `k x k` box filter applied independently per channel.
    pub fn box_filter(channels: usize, k: usize) -> Result<Self> {
        let mut w = Tensor::zeros(&[channels, channels, k, k]);
        let v = 1.0 / (k * k) as f64;
        for c in 0..channels {
            for i in 0..k * k {
                w.data_mut()[(c * channels + c) * k * k + i] = v;
            }
        }
        Self::new(w, Tensor::zeros(&[channels]))
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn size(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn halo(&self) -> usize {
        (self.size() - 1) / 2
    }
}

/// Stride-1 cross-correlation without implicit padding: input
/// `[C_in, H + 2p, W + 2p]` already carries its halo, output is `[C_out, H, W]`.
pub fn conv2d_valid(x: &Tensor, kernel: &Conv2dKernel) -> Result<Tensor> {
    let &[c_in, hp, wp] = x.shape() else {
        return Err(shape_err(format!("conv2d_valid expects [C_in, H, W], got {:?}", x.shape())));
    };
    let k = kernel.size();
    if c_in != kernel.c_in() {
        return Err(shape_err(format!("input has {c_in} channels, kernel expects {}", kernel.c_in())));
    }
    if hp < k || wp < k {
        return Err(shape_err(format!("input {hp}x{wp} smaller than kernel {k}x{k}")));
    }
    let (h, w) = (hp + 1 - k, wp + 1 - k);
    let mut out = Tensor::zeros(&[kernel.c_out(), h, w]);
    conv2d_valid_raw(
        x.data(),
        c_in,
        hp,
        wp,
        kernel.weights.data(),
        kernel.bias.data(),
        kernel.c_out(),
        k,
        out.data_mut(),
    );
    Ok(out)
}

/// Slice-level forward used by the layers that keep their own buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_valid_raw(
    x: &[f64],
    c_in: usize,
    hp: usize,
    wp: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
    out: &mut [f64],
) {
    let (h, w) = (hp + 1 - k, wp + 1 - k);
    debug_assert_eq!(out.len(), c_out * h * w);
    for co in 0..c_out {
        let dst = &mut out[co * h * w..(co + 1) * h * w];
        dst.fill(bias[co]);
        for ci in 0..c_in {
            let src = &x[ci * hp * wp..(ci + 1) * hp * wp];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weights[((co * c_in + ci) * k + ky) * k + kx];
                    for y in 0..h {
                        let row = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                        let d = &mut dst[y * w..(y + 1) * w];
                        for (o, &s) in d.iter_mut().zip(row) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_valid_raw`]. `dx` (padded input layout), `dw` and
/// `db` are accumulated into, not overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_valid_backward_raw(
    x: &[f64],
    c_in: usize,
    hp: usize,
    wp: usize,
    weights: &[f64],
    c_out: usize,
    k: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (h, w) = (hp + 1 - k, wp + 1 - k);
    for co in 0..c_out {
        let g = &dy[co * h * w..(co + 1) * h * w];
        db[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let src = &x[ci * hp * wp..(ci + 1) * hp * wp];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let row = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                        acc += row.iter().zip(&g[y * w..(y + 1) * w]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dw[((co * c_in + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    if let Some(dx) = dx {
        for ci in 0..c_in {
            let dst = &mut dx[ci * hp * wp..(ci + 1) * hp * wp];
            for co in 0..c_out {
                let g = &dy[co * h * w..(co + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weights[((co * c_in + ci) * k + ky) * k + kx];
                        for y in 0..h {
                            let d = &mut dst[(y + ky) * wp + kx..(y + ky) * wp + kx + w];
                            for (o, &s) in d.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Surround each channel plane of `[C, H, W]` with `p` zeros.
pub fn zero_pad(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            let s = (ch * h + y) * w;
            let d = (ch * hp + y + p) * wp + p;
            out[d..d + w].copy_from_slice(&x[s..s + w]);
        }
    }
    out
}
