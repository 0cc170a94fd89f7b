use crate::error::{shape_err, Result};
use crate::geometry::{CubeFace, CubemapGrid};
use crate::numeric::Tensor;

pub const PLANES: usize = 6;

/// `[B, M, C, H, W]` tensor with `M = 6` square planes in storage face order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPlaneTensor(Tensor);

impl MultiPlaneTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let &[_, m, _, h, w] = t.shape() else {
            return Err(shape_err(format!("multi-plane tensor must be [B, 6, C, H, W], got {:?}", t.shape())));
        };
        if m != PLANES {
            return Err(shape_err(format!("expected {PLANES} planes, got {m}")));
        }
        if h != w {
            return Err(shape_err(format!("planes must be square, got {h}x{w}")));
        }
        Ok(Self(t))
    }

    pub fn zeros(batch: usize, channels: usize, size: usize) -> Self {
        Self(Tensor::zeros(&[batch, PLANES, channels, size, size]))
    }

    pub fn from_cubemaps(cubes: &[CubemapGrid]) -> Result<Self> {
        let first = cubes.first().ok_or_else(|| shape_err("no cubemaps given"))?;
        let (n, c) = (first.size(), first.channels());
        let mut data = Vec::with_capacity(cubes.len() * PLANES * c * n * n);
        for cube in cubes {
            if (cube.size(), cube.channels()) != (n, c) {
                return Err(shape_err("cubemaps differ in shape"));
            }
            data.extend_from_slice(cube.data());
        }
        Self::new(Tensor::from_vec(&[cubes.len(), PLANES, c, n, n], data)?)
    }

    pub fn to_cubemap(&self, b: usize) -> CubemapGrid {
        CubemapGrid::from_data(self.size(), self.channels(), self.sample(b).to_vec())
            .expect("sample slice matches cubemap layout")
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    fn sample_len(&self) -> usize {
        PLANES * self.channels() * self.size() * self.size()
    }

    /// All planes of batch item `b`, `[M, C, H, W]`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.0.data()[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.0.data_mut()[b * n..(b + 1) * n]
    }

    /// One plane `[C, H, W]`.
    pub fn plane(&self, b: usize, face: CubeFace) -> &[f64] {
        let n = self.channels() * self.size() * self.size();
        &self.sample(b)[face.index() * n..(face.index() + 1) * n]
    }

    pub fn plane_mut(&mut self, b: usize, face: CubeFace) -> &mut [f64] {
        let n = self.channels() * self.size() * self.size();
        let fi = face.index();
        &mut self.sample_mut(b)[fi * n..(fi + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, face: CubeFace, c: usize, i: usize, j: usize) -> f64 {
        let (ch, n) = (self.channels(), self.size());
        self.0.data()[(((b * PLANES + face.index()) * ch + c) * n + i) * n + j]
    }
}

/// `[M, C, H, W]` planes to `[M * H * W, C]` tokens in face, row, column order.
pub fn planes_to_tokens(x: &[f64], m: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in 0..m {
        for ch in 0..c {
            let src = &x[(p * c + ch) * hw..(p * c + ch + 1) * hw];
            for (t, &v) in src.iter().enumerate() {
                out[(p * hw + t) * c + ch] = v;
            }
        }
    }
    out
}

pub fn tokens_to_planes(x: &[f64], m: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in 0..m {
        for ch in 0..c {
            let dst = &mut out[(p * c + ch) * hw..(p * c + ch + 1) * hw];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = x[(p * hw + t) * c + ch];
            }
        }
    }
    out
}
