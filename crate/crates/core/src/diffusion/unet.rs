//! A two-level U-Net small enough to train on a laptop CPU, built only from
//! the multi-plane operators. Forward and backward passes are written out by
//! hand; there is no autograd.
//!
//! ```text
//! conv_in -> res1 ------------------------------(+)-> res4 -> GN -> SiLU -> conv_out
//!             \-> avgpool -> res2 -> attn -> res3 -> upsample /
//! ```
//!
//! Every 3x3 convolution cube-pads when `sync.conv` is set, every group
//! norm pools statistics over all faces when `sync.gn` is set, and the
//! attention block attends across all faces when `sync.sa` is set. Turning
//! a flag off swaps in the per-face baseline without changing any parameter.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::state::{FaceMask, IMG_CHANNELS, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::{invalid, shape_err, Error, Result};
use crate::geometry::Filter;
use crate::numeric::{
    attention_raw, attention_raw_backward, conv2d_valid_backward_raw, conv2d_valid_raw, group_norm_mchw,
    group_norm_mchw_backward, zero_pad, GroupNormCache, Tensor,
};
use crate::sync::{planes_to_tokens, tokens_to_planes, ArchSpec, HaloPlan, LayerSpec, MultiPlaneTensor, SyncFlags, PLANES};

const M: usize = PLANES;

fn default_eps() -> f64 {
    crate::numeric::DEFAULT_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Feature width at both resolutions.
    pub channels: usize,
    pub groups: usize,
    pub heads: usize,
    pub temb_dim: usize,
    pub sync: SyncFlags,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            groups: 2,
            heads: 1,
            temb_dim: 64,
            sync: SyncFlags::ALL,
            eps: default_eps(),
        }
    }
}

impl UNetConfig {
    fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.groups == 0 || c % self.groups != 0 {
            return Err(invalid(format!("{c} channels not divisible into {} groups", self.groups)));
        }
        if self.heads == 0 || c % self.heads != 0 {
            return Err(invalid(format!("{c} channels not divisible by {} heads", self.heads)));
        }
        if self.temb_dim < 2 || self.temb_dim % 2 != 0 {
            return Err(invalid("timestep embedding width must be even"));
        }
        Ok(())
    }

    /// Layer list for [`crate::sync::estimate_flops`]. The timestep MLPs,
    /// pooling and activations are negligible and left out.
    pub fn arch_spec(&self) -> ArchSpec {
        let (c, g) = (self.channels as u64, self.groups as u64);
        let conv = |c_in, c_out, scale| LayerSpec::Conv { c_in, c_out, kernel: 3, scale };
        let norm = |scale| LayerSpec::GroupNorm { channels: c, groups: g, scale };
        let res = |scale| [norm(scale), conv(c, c, scale), norm(scale), conv(c, c, scale)];
        let mut layers = vec![conv(INPUT_CHANNELS as u64, c, 1)];
        layers.extend(res(1));
        layers.extend(res(2));
        layers.push(norm(2));
        layers.push(LayerSpec::Attention {
            channels: c,
            heads: self.heads as u64,
            scale: 2,
        });
        layers.extend(res(2));
        layers.extend(res(1));
        layers.push(norm(1));
        layers.push(conv(c, OUTPUT_CHANNELS as u64, 1));
        ArchSpec { layers }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients in the same layout as [`ToyUNet::params`].
pub type Grads = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
    ci: usize,
    co: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    g: usize,
    b: usize,
    c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Res {
    n1: Norm,
    c1: Conv,
    tw: usize,
    tb: usize,
    n2: Norm,
    c2: Conv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attn {
    n: Norm,
    q: Conv,
    k: Conv,
    v: Conv,
    o: Conv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    conv_in: Conv,
    res1: Res,
    res2: Res,
    attn: Attn,
    res3: Res,
    res4: Res,
    norm_out: Norm,
    conv_out: Conv,
}

struct Builder<'r, R: Rng> {
    params: Vec<Param>,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.params.push(Param { name, shape, data });
        self.params.len() - 1
    }

    fn normal(&mut self, len: usize, std: f64) -> Vec<f64> {
        (0..len).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize, gain: f64) -> Conv {
        let std = gain / ((ci * k * k) as f64).sqrt();
        let data = self.normal(co * ci * k * k, std);
        let w = self.push(format!("{name}.weight"), vec![co, ci, k, k], data);
        let b = self.push(format!("{name}.bias"), vec![co], vec![0.0; co]);
        Conv { w, b, ci, co, k }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let g = self.push(format!("{name}.gamma"), vec![c], vec![1.0; c]);
        let b = self.push(format!("{name}.beta"), vec![c], vec![0.0; c]);
        Norm { g, b, c }
    }

    fn res(&mut self, name: &str, c: usize, temb: usize) -> Res {
        let n1 = self.norm(&format!("{name}.norm1"), c);
        let c1 = self.conv(&format!("{name}.conv1"), c, c, 3, 1.0);
        let data = self.normal(c * temb, 1.0 / (temb as f64).sqrt());
        let tw = self.push(format!("{name}.temb.weight"), vec![c, temb], data);
        let tb = self.push(format!("{name}.temb.bias"), vec![c], vec![0.0; c]);
        let n2 = self.norm(&format!("{name}.norm2"), c);
        let c2 = self.conv(&format!("{name}.conv2"), c, c, 3, 0.5);
        Res { n1, c1, tw, tb, n2, c2 }
    }

    fn attn(&mut self, name: &str, c: usize) -> Attn {
        Attn {
            n: self.norm(&format!("{name}.norm"), c),
            q: self.conv(&format!("{name}.q"), c, c, 1, 1.0),
            k: self.conv(&format!("{name}.k"), c, c, 1, 1.0),
            v: self.conv(&format!("{name}.v"), c, c, 1, 1.0),
            o: self.conv(&format!("{name}.proj"), c, c, 1, 0.5),
        }
    }
}

fn build<R: Rng>(config: &UNetConfig, rng: &mut R) -> (Vec<Param>, Layout) {
    let (c, d) = (config.channels, config.temb_dim);
    let mut b = Builder { params: Vec::new(), rng };
    let layout = Layout {
        conv_in: b.conv("conv_in", INPUT_CHANNELS, c, 3, 1.0),
        res1: b.res("down.res", c, d),
        res2: b.res("mid.res1", c, d),
        attn: b.attn("mid.attn", c),
        res3: b.res("mid.res2", c, d),
        res4: b.res("up.res", c, d),
        norm_out: b.norm("norm_out", c),
        conv_out: b.conv("conv_out", c, OUTPUT_CHANNELS, 3, 0.1),
    };
    (b.params, layout)
}

/// Sinusoidal timestep embedding: `dim / 2` sines then `dim / 2` cosines
/// with geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

fn silu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// 2x2 average pooling of `planes` square planes of side `n`.
fn avg_pool(x: &[f64], planes: usize, n: usize) -> Vec<f64> {
    let m = n / 2;
    let mut out = vec![0.0; planes * m * m];
    for p in 0..planes {
        let src = &x[p * n * n..(p + 1) * n * n];
        for i in 0..m {
            for j in 0..m {
                let s = src[2 * i * n + 2 * j] + src[2 * i * n + 2 * j + 1] + src[(2 * i + 1) * n + 2 * j] + src[(2 * i + 1) * n + 2 * j + 1];
                out[p * m * m + i * m + j] = 0.25 * s;
            }
        }
    }
    out
}

fn avg_pool_backward(dy: &[f64], planes: usize, n: usize) -> Vec<f64> {
    let m = n / 2;
    let mut dx = vec![0.0; planes * n * n];
    for p in 0..planes {
        for i in 0..n {
            for j in 0..n {
                dx[p * n * n + i * n + j] = 0.25 * dy[p * m * m + (i / 2) * m + j / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling of planes of side `m`.
fn upsample(x: &[f64], planes: usize, m: usize) -> Vec<f64> {
    let n = 2 * m;
    let mut out = vec![0.0; planes * n * n];
    for p in 0..planes {
        for i in 0..n {
            for j in 0..n {
                out[p * n * n + i * n + j] = x[p * m * m + (i / 2) * m + j / 2];
            }
        }
    }
    out
}

fn upsample_backward(dy: &[f64], planes: usize, m: usize) -> Vec<f64> {
    let n = 2 * m;
    let mut dx = vec![0.0; planes * m * m];
    for p in 0..planes {
        for i in 0..n {
            for j in 0..n {
                dx[p * m * m + (i / 2) * m + j / 2] += dy[p * n * n + i * n + j];
            }
        }
    }
    dx
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Remove a `p`-wide border from `planes` planes of side `n + 2p`.
fn crop(x: &[f64], planes: usize, n: usize, p: usize) -> Vec<f64> {
    let np = n + 2 * p;
    let mut out = vec![0.0; planes * n * n];
    for q in 0..planes {
        for i in 0..n {
            let src = &x[q * np * np + (i + p) * np + p..q * np * np + (i + p) * np + p + n];
            out[q * n * n + i * n..q * n * n + (i + 1) * n].copy_from_slice(src);
        }
    }
    out
}

/// Mutable access to two distinct gradient slots.
fn pair_mut(g: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

struct Plans {
    full: Option<HaloPlan>,
    half: Option<HaloPlan>,
    n: usize,
}

impl Plans {
    fn get(&self, n: usize) -> &HaloPlan {
        let p = if n == self.n { &self.full } else { &self.half };
        p.as_ref().expect("halo plan exists when convolutions are synced")
    }
}

struct ResCache {
    n1: GroupNormCache,
    a1: Vec<f64>,
    p1: Vec<f64>,
    n2: GroupNormCache,
    a2: Vec<f64>,
    p2: Vec<f64>,
    temb: Vec<f64>,
}

struct AttnCache {
    n: GroupNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
}

struct Cache {
    p_in: Vec<f64>,
    res1: ResCache,
    res2: ResCache,
    attn: AttnCache,
    res3: ResCache,
    res4: ResCache,
    n_out: GroupNormCache,
    a_out: Vec<f64>,
    p_out: Vec<f64>,
}

struct Ctx<'a> {
    p: &'a [Param],
    cfg: &'a UNetConfig,
    plans: &'a Plans,
}

impl Ctx<'_> {
    fn conv(&self, l: Conv, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let p = (l.k - 1) / 2;
        let padded = if p == 0 {
            x.to_vec()
        } else if self.cfg.sync.conv {
            self.plans.get(n).pad(x, l.ci)
        } else {
            zero_pad(x, M * l.ci, n, n, p)
        };
        let np = n + 2 * p;
        let mut y = vec![0.0; M * l.co * n * n];
        for f in 0..M {
            conv2d_valid_raw(
                &padded[f * l.ci * np * np..(f + 1) * l.ci * np * np],
                l.ci,
                np,
                np,
                &self.p[l.w].data,
                &self.p[l.b].data,
                l.co,
                l.k,
                &mut y[f * l.co * n * n..(f + 1) * l.co * n * n],
            );
        }
        (y, padded)
    }

    fn conv_backward(&self, l: Conv, padded: &[f64], dy: &[f64], n: usize, g: &mut Grads) -> Vec<f64> {
        let p = (l.k - 1) / 2;
        let np = n + 2 * p;
        let mut dpad = vec![0.0; padded.len()];
        let (gw, gb) = pair_mut(g, l.w, l.b);
        for f in 0..M {
            conv2d_valid_backward_raw(
                &padded[f * l.ci * np * np..(f + 1) * l.ci * np * np],
                l.ci,
                np,
                np,
                &self.p[l.w].data,
                l.co,
                l.k,
                &dy[f * l.co * n * n..(f + 1) * l.co * n * n],
                Some(&mut dpad[f * l.ci * np * np..(f + 1) * l.ci * np * np]),
                gw,
                gb,
            );
        }
        if p == 0 {
            dpad
        } else if self.cfg.sync.conv {
            self.plans.get(n).pad_backward(&dpad, l.ci)
        } else {
            crop(&dpad, M * l.ci, n, p)
        }
    }

    fn norm(&self, l: Norm, x: &[f64], n: usize) -> (Vec<f64>, GroupNormCache) {
        group_norm_mchw(
            x,
            M,
            l.c,
            n * n,
            self.cfg.groups,
            self.cfg.sync.group_norm,
            &self.p[l.g].data,
            &self.p[l.b].data,
            self.cfg.eps,
        )
    }

    fn norm_backward(&self, l: Norm, cache: &GroupNormCache, dy: &[f64], n: usize, g: &mut Grads) -> Vec<f64> {
        let (gg, gb) = pair_mut(g, l.g, l.b);
        group_norm_mchw_backward(cache, dy, M, l.c, n * n, self.cfg.groups, self.cfg.sync.group_norm, &self.p[l.g].data, gg, gb)
    }

    fn res(&self, l: Res, x: &[f64], temb: &[f64], n: usize) -> (Vec<f64>, ResCache) {
        let hw = n * n;
        let c = l.c1.co;
        let (a1, n1) = self.norm(l.n1, x, n);
        let (mut h, p1) = self.conv(l.c1, &silu(&a1), n);
        let (tw, tb) = (&self.p[l.tw].data, &self.p[l.tb].data);
        let d = temb.len();
        for ch in 0..c {
            let e = tb[ch] + tw[ch * d..(ch + 1) * d].iter().zip(temb).map(|(w, t)| w * t).sum::<f64>();
            for f in 0..M {
                h[(f * c + ch) * hw..(f * c + ch + 1) * hw].iter_mut().for_each(|v| *v += e);
            }
        }
        let (a2, n2) = self.norm(l.n2, &h, n);
        let (mut y, p2) = self.conv(l.c2, &silu(&a2), n);
        add_into(&mut y, x);
        (
            y,
            ResCache {
                n1,
                a1,
                p1,
                n2,
                a2,
                p2,
                temb: temb.to_vec(),
            },
        )
    }

    fn res_backward(&self, l: Res, cache: &ResCache, dy: &[f64], n: usize, g: &mut Grads) -> Vec<f64> {
        let hw = n * n;
        let c = l.c1.co;
        let ds2 = self.conv_backward(l.c2, &cache.p2, dy, n, g);
        let da2 = silu_backward(&cache.a2, &ds2);
        let dh = self.norm_backward(l.n2, &cache.n2, &da2, n, g);
        let d = cache.temb.len();
        {
            let (gw, gb) = pair_mut(g, l.tw, l.tb);
            for ch in 0..c {
                let de: f64 = (0..M).map(|f| dh[(f * c + ch) * hw..(f * c + ch + 1) * hw].iter().sum::<f64>()).sum();
                gb[ch] += de;
                for (w, t) in gw[ch * d..(ch + 1) * d].iter_mut().zip(&cache.temb) {
                    *w += de * t;
                }
            }
        }
        let ds1 = self.conv_backward(l.c1, &cache.p1, &dh, n, g);
        let da1 = silu_backward(&cache.a1, &ds1);
        let mut dx = self.norm_backward(l.n1, &cache.n1, &da1, n, g);
        add_into(&mut dx, dy);
        dx
    }

    /// Token sequences: one of all faces when synced, else one per face.
    fn sequences(&self, hw: usize) -> (usize, usize) {
        if self.cfg.sync.attention {
            (1, M * hw)
        } else {
            (M, hw)
        }
    }

    fn attn(&self, l: Attn, x: &[f64], n: usize) -> (Vec<f64>, AttnCache) {
        let (hw, c, heads) = (n * n, l.n.c, self.cfg.heads);
        let (a, nc) = self.norm(l.n, x, n);
        let q = planes_to_tokens(&self.conv(l.q, &a, n).0, M, c, hw);
        let k = planes_to_tokens(&self.conv(l.k, &a, n).0, M, c, hw);
        let v = planes_to_tokens(&self.conv(l.v, &a, n).0, M, c, hw);
        let (seqs, len) = self.sequences(hw);
        let mut o_tok = vec![0.0; M * hw * c];
        let mut probs = Vec::with_capacity(seqs);
        for s in 0..seqs {
            let r = s * len * c..(s + 1) * len * c;
            let (o, p) = attention_raw(&q[r.clone()], &k[r.clone()], &v[r.clone()], len, c, heads, true);
            o_tok[r].copy_from_slice(&o);
            probs.push(p);
        }
        let o = tokens_to_planes(&o_tok, M, c, hw);
        let (mut y, _) = self.conv(l.o, &o, n);
        add_into(&mut y, x);
        (
            y,
            AttnCache {
                n: nc,
                a,
                q,
                k,
                v,
                probs,
                o,
            },
        )
    }

    fn attn_backward(&self, l: Attn, cache: &AttnCache, dy: &[f64], n: usize, g: &mut Grads) -> Vec<f64> {
        let (hw, c, heads) = (n * n, l.n.c, self.cfg.heads);
        let do_planes = self.conv_backward(l.o, &cache.o, dy, n, g);
        let do_tok = planes_to_tokens(&do_planes, M, c, hw);
        let (seqs, len) = self.sequences(hw);
        let mut dq = vec![0.0; M * hw * c];
        let mut dk = vec![0.0; M * hw * c];
        let mut dv = vec![0.0; M * hw * c];
        for s in 0..seqs {
            let r = s * len * c..(s + 1) * len * c;
            let (gq, gk, gv) = attention_raw_backward(
                &cache.q[r.clone()],
                &cache.k[r.clone()],
                &cache.v[r.clone()],
                &cache.probs[s],
                &do_tok[r.clone()],
                len,
                c,
                heads,
            );
            dq[r.clone()].copy_from_slice(&gq);
            dk[r.clone()].copy_from_slice(&gk);
            dv[r].copy_from_slice(&gv);
        }
        let mut da = self.conv_backward(l.q, &cache.a, &tokens_to_planes(&dq, M, c, hw), n, g);
        add_into(&mut da, &self.conv_backward(l.k, &cache.a, &tokens_to_planes(&dk, M, c, hw), n, g));
        add_into(&mut da, &self.conv_backward(l.v, &cache.a, &tokens_to_planes(&dv, M, c, hw), n, g));
        let mut dx = self.norm_backward(l.n, &cache.n, &da, n, g);
        add_into(&mut dx, dy);
        dx
    }

    fn forward(&self, lay: &Layout, x: &[f64], t: usize, n: usize) -> (Vec<f64>, Cache) {
        let c = self.cfg.channels;
        let m = n / 2;
        let temb = timestep_embedding(t, self.cfg.temb_dim);
        let (h0, p_in) = self.conv(lay.conv_in, x, n);
        let (h1, res1) = self.res(lay.res1, &h0, &temb, n);
        let d = avg_pool(&h1, M * c, n);
        let (h2, res2) = self.res(lay.res2, &d, &temb, m);
        let (h3, attn) = self.attn(lay.attn, &h2, m);
        let (h4, res3) = self.res(lay.res3, &h3, &temb, m);
        let mut u = upsample(&h4, M * c, m);
        add_into(&mut u, &h1);
        let (h5, res4) = self.res(lay.res4, &u, &temb, n);
        let (a_out, n_out) = self.norm(lay.norm_out, &h5, n);
        let (out, p_out) = self.conv(lay.conv_out, &silu(&a_out), n);
        (
            out,
            Cache {
                p_in,
                res1,
                res2,
                attn,
                res3,
                res4,
                n_out,
                a_out,
                p_out,
            },
        )
    }

    fn backward(&self, lay: &Layout, cache: &Cache, dout: &[f64], n: usize) -> Grads {
        let c = self.cfg.channels;
        let m = n / 2;
        let mut g: Grads = self.p.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let ds = self.conv_backward(lay.conv_out, &cache.p_out, dout, n, &mut g);
        let da = silu_backward(&cache.a_out, &ds);
        let dh5 = self.norm_backward(lay.norm_out, &cache.n_out, &da, n, &mut g);
        let du = self.res_backward(lay.res4, &cache.res4, &dh5, n, &mut g);
        let dh4 = upsample_backward(&du, M * c, m);
        let dh3 = self.res_backward(lay.res3, &cache.res3, &dh4, m, &mut g);
        let dh2 = self.attn_backward(lay.attn, &cache.attn, &dh3, m, &mut g);
        let dd = self.res_backward(lay.res2, &cache.res2, &dh2, m, &mut g);
        let mut dh1 = avg_pool_backward(&dd, M * c, n);
        add_into(&mut dh1, &du);
        let dh0 = self.res_backward(lay.res1, &cache.res1, &dh1, n, &mut g);
        self.conv_backward(lay.conv_in, &cache.p_in, &dh0, n, &mut g);
        g
    }
}

/// Anything that predicts `v` from the assembled network input.
pub trait VPredictor {
    /// `input` is `[B, 6, 12, H, W]`, `t` one timestep per batch item;
    /// returns `[B, 6, 8, H, W]`.
    fn predict_v(&self, input: &MultiPlaneTensor, t: &[usize]) -> Result<MultiPlaneTensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUNet {
    config: UNetConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// Per-sample regression targets and mask for [`ToyUNet::loss_and_grad`].
pub struct LossTarget<'a> {
    pub v_c: &'a [f64],
    pub v_d: &'a [f64],
    pub mask: FaceMask,
    /// Divisor of the squared error sums (the element count of one block
    /// over the whole batch).
    pub denom: f64,
}

impl ToyUNet {
    pub fn new<R: Rng>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build(&config, rng);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Switch synchronization flags; parameters are shared between variants.
    pub fn set_sync(&mut self, sync: SyncFlags) {
        self.config.sync = sync;
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    fn check_size(&self, n: usize) -> Result<()> {
        if n < 8 || n % 2 != 0 {
            return Err(shape_err(format!("face size must be even and at least 8, got {n}")));
        }
        Ok(())
    }

    fn plans(&self, n: usize) -> Result<Plans> {
        let make = |s: usize| -> Result<Option<HaloPlan>> {
            if self.config.sync.conv {
                Ok(Some(HaloPlan::new(s, 1, Filter::Bilinear)?))
            } else {
                Ok(None)
            }
        };
        Ok(Plans {
            full: make(n)?,
            half: make(n / 2)?,
            n,
        })
    }

    fn ctx<'a>(&'a self, plans: &'a Plans) -> Ctx<'a> {
        Ctx {
            p: &self.params,
            cfg: &self.config,
            plans,
        }
    }

    /// Forward pass of one sample `[6, 12, n, n]`.
    pub fn forward_sample(&self, x: &[f64], t: usize, n: usize) -> Result<Vec<f64>> {
        self.check_size(n)?;
        let plans = self.plans(n)?;
        Ok(self.ctx(&plans).forward(&self.layout, x, t, n).0)
    }

    /// Masked squared-error loss of one sample and, if requested, its
    /// parameter gradients.
    pub fn loss_and_grad(&self, x: &[f64], t: usize, n: usize, target: &LossTarget, want_grad: bool) -> Result<(f64, Option<Grads>)> {
        self.check_size(n)?;
        let plans = self.plans(n)?;
        let ctx = self.ctx(&plans);
        let (out, cache) = ctx.forward(&self.layout, x, t, n);
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "forward".into(),
                detail: format!("output element {k} is {} at t={t}", out[k]),
            });
        }
        let (loss, dout) = masked_mse(&out, target, n);
        let grads = want_grad.then(|| ctx.backward(&self.layout, &cache, &dout, n));
        Ok((loss, grads))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config,
            params: self.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect(),
        };
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(stem.with_extension("model.json"), serde_json::to_string_pretty(&header)?)?;
        let flat: Vec<f64> = self.params.iter().flat_map(|p| p.data.iter().copied()).collect();
        let len = flat.len();
        Tensor::from_vec(&[len], flat)?.save(stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("model.json"))?)?;
        let flat = Tensor::load(stem)?.into_vec();
        let mut model = Self::new(header.config, &mut rand_chacha::ChaCha8Rng::from_seed_zero())?;
        let expected: usize = model.parameter_count();
        if flat.len() != expected || header.params.len() != model.params.len() {
            return Err(Error::Format(format!("checkpoint holds {} values, model needs {expected}", flat.len())));
        }
        let mut off = 0;
        for (p, (name, shape)) in model.params.iter_mut().zip(&header.params) {
            if &p.name != name || &p.shape != shape {
                return Err(Error::Format(format!("checkpoint parameter {name} {shape:?} does not match {} {:?}", p.name, p.shape)));
            }
            let len = p.data.len();
            p.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(model)
    }
}

trait SeedZero {
    fn from_seed_zero() -> Self;
}

impl SeedZero for rand_chacha::ChaCha8Rng {
    fn from_seed_zero() -> Self {
        rand::SeedableRng::seed_from_u64(0)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: UNetConfig,
    params: Vec<(String, Vec<usize>)>,
}

/// Squared error of the generated faces, image and depth blocks summed;
/// returns the loss and its gradient w.r.t. the network output.
fn masked_mse(out: &[f64], target: &LossTarget, n: usize) -> (f64, Vec<f64>) {
    let plane = n * n;
    let blk = IMG_CHANNELS * plane;
    let mut loss = 0.0;
    let mut dout = vec![0.0; out.len()];
    for f in (0..M).filter(|&f| target.mask.is_generated(f)) {
        let base = f * OUTPUT_CHANNELS * plane;
        for (off, tv) in [(0, target.v_c), (blk, target.v_d)] {
            for k in 0..blk {
                let r = out[base + off + k] - tv[f * blk + k];
                loss += r * r;
                dout[base + off + k] = 2.0 * r / target.denom;
            }
        }
    }
    (loss / target.denom, dout)
}

impl VPredictor for ToyUNet {
    fn predict_v(&self, input: &MultiPlaneTensor, t: &[usize]) -> Result<MultiPlaneTensor> {
        if input.channels() != INPUT_CHANNELS {
            return Err(shape_err(format!("network input needs {INPUT_CHANNELS} channels, got {}", input.channels())));
        }
        if t.len() != input.batch() {
            return Err(shape_err("one timestep per batch item required"));
        }
        let n = input.size();
        self.check_size(n)?;
        let plans = self.plans(n)?;
        let ctx = self.ctx(&plans);
        let outs: Vec<Vec<f64>> = (0..input.batch())
            .into_par_iter()
            .map(|b| ctx.forward(&self.layout, input.sample(b), t[b], n).0)
            .collect();
        let data = outs.concat();
        MultiPlaneTensor::new(Tensor::from_vec(&[input.batch(), M, OUTPUT_CHANNELS, n, n], data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(sync: SyncFlags, n: usize) -> (ToyUNet, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = UNetConfig {
            channels: 4,
            groups: 2,
            heads: 2,
            temb_dim: 8,
            sync,
            eps: 1e-5,
        };
        let mut model = ToyUNet::new(cfg, &mut rng).unwrap();
        // Move the norm affines off their identity init so their gradients
        // are exercised in a generic state.
        for p in model.params_mut() {
            if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with("bias") {
                for v in &mut p.data {
                    *v += 0.3 * rng.random_range(-1.0..1.0);
                }
            }
        }
        let x: Vec<f64> = (0..M * INPUT_CHANNELS * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vc: Vec<f64> = (0..M * IMG_CHANNELS * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vd: Vec<f64> = (0..M * IMG_CHANNELS * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (model, x, vc, vd)
    }

    fn gradient_check(sync: SyncFlags) {
        let n = 8;
        let (mut model, x, vc, vd) = setup(sync, n);
        let target = LossTarget {
            v_c: &vc,
            v_d: &vd,
            mask: FaceMask::conditioned_on(crate::geometry::CubeFace::Front),
            denom: (5 * IMG_CHANNELS * n * n) as f64,
        };
        let t = 417;
        let (_, g) = model.loss_and_grad(&x, t, n, &target, true).unwrap();
        let g = g.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            let pi = rng.random_range(0..model.params.len());
            let k = rng.random_range(0..model.params[pi].data.len());
            let orig = model.params[pi].data[k];
            model.params[pi].data[k] = orig + h;
            let lp = model.loss_and_grad(&x, t, n, &target, false).unwrap().0;
            model.params[pi].data[k] = orig - h;
            let lm = model.loss_and_grad(&x, t, n, &target, false).unwrap().0;
            model.params[pi].data[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g[pi][k];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{} [{k}]: analytic {an} fd {fd}", model.params[pi].name);
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences_synced() {
        gradient_check(SyncFlags::ALL);
    }

    #[test]
    fn gradients_match_finite_differences_unsynced() {
        gradient_check(SyncFlags::NONE);
    }

    #[test]
    fn exact_prediction_has_zero_loss_and_condition_faces_are_ignored() {
        let n = 8;
        let (model, x, _, _) = setup(SyncFlags::ALL, n);
        let out = model.forward_sample(&x, 10, n).unwrap();
        let plane = n * n;
        let blk = IMG_CHANNELS * plane;
        let mut vc = vec![0.0; M * blk];
        let mut vd = vec![0.0; M * blk];
        for f in 0..M {
            vc[f * blk..(f + 1) * blk].copy_from_slice(&out[f * 2 * blk..f * 2 * blk + blk]);
            vd[f * blk..(f + 1) * blk].copy_from_slice(&out[f * 2 * blk + blk..(f + 1) * 2 * blk]);
        }
        // Garbage targets on the condition face must not matter.
        vc[..blk].fill(123.0);
        let target = LossTarget {
            v_c: &vc,
            v_d: &vd,
            mask: FaceMask::conditioned_on(crate::geometry::CubeFace::Front),
            denom: 1.0,
        };
        let (loss, g) = model.loss_and_grad(&x, 10, n, &target, true).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.unwrap().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_is_independent_of_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ToyUNet::new(UNetConfig::default(), &mut rng).unwrap();
        let b = ToyUNet::new(
            UNetConfig {
                sync: SyncFlags::NONE,
                ..UNetConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (model, x, _, _) = setup(SyncFlags::ALL, 8);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        model.save(&stem).unwrap();
        let back = ToyUNet::load(&stem).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.forward_sample(&x, 5, 8).unwrap(), model.forward_sample(&x, 5, 8).unwrap());
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = avg_pool(&x, 2, 4).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(avg_pool_backward(&y, 2, 4)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
        let lhs: f64 = upsample(&y, 2, 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.iter().zip(upsample_backward(&x, 2, 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
