use serde::{Deserialize, Serialize};

use super::{face_of_vector, CubeFace, FaceUV, SphericalDirection, Vec3};
use crate::error::{invalid, shape_err, Error, Result};
use crate::numeric::bilinear_at;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    Nearest,
    #[default]
    Bilinear,
}

/// Planar `C x H x W` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_err(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut r = Self::zeros(height, width, channels);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    r.data[(c * height + i) * width + j] = f(c, i, j);
                }
            }
        }
        r
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Six square faces in `[Front, Right, Back, Left, Up, Down]` order, stored
/// planar per face: `[face][channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubemapGrid {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl CubemapGrid {
    pub fn zeros(size: usize, channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![0.0; 6 * channels * size * size],
        }
    }

    pub fn from_data(size: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 6 * channels * size * size {
            return Err(shape_err(format!(
                "cubemap 6x{channels}x{size}x{size} needs {} values, got {}",
                6 * channels * size * size,
                data.len()
            )));
        }
        Ok(Self { size, channels, data })
    }

    pub fn from_faces(faces: &[Raster]) -> Result<Self> {
        if faces.len() != 6 {
            return Err(shape_err(format!("expected 6 faces, got {}", faces.len())));
        }
        let (h, w, c) = (faces[0].height, faces[0].width, faces[0].channels);
        if h != w {
            return Err(shape_err(format!("faces must be square, got {h}x{w}")));
        }
        let mut data = Vec::with_capacity(6 * h * w * c);
        for f in faces {
            if (f.height, f.width, f.channels) != (h, w, c) {
                return Err(shape_err("faces differ in shape"));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self { size: h, channels: c, data })
    }

    /// Fill each pixel from the unit direction through its center.
    pub fn from_direction_fn(size: usize, channels: usize, mut f: impl FnMut(Vec3, &mut [f64])) -> Self {
        let mut grid = Self::zeros(size, channels);
        let mut buf = vec![0.0; channels];
        for face in CubeFace::ALL {
            for i in 0..size {
                for j in 0..size {
                    let d = super::pixel_direction(face, i, j, size);
                    f(d, &mut buf);
                    for (c, &v) in buf.iter().enumerate() {
                        grid.set(face, c, i, j, v);
                    }
                }
            }
        }
        grid
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, face: CubeFace, c: usize, i: usize, j: usize) -> usize {
        ((face.index() * self.channels + c) * self.size + i) * self.size + j
    }

    #[inline]
    pub fn get(&self, face: CubeFace, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(face, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, face: CubeFace, c: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(face, c, i, j);
        self.data[o] = v;
    }

    pub fn face_slice(&self, face: CubeFace) -> &[f64] {
        let n = self.channels * self.size * self.size;
        &self.data[face.index() * n..(face.index() + 1) * n]
    }

    pub fn face_slice_mut(&mut self, face: CubeFace) -> &mut [f64] {
        let n = self.channels * self.size * self.size;
        &mut self.data[face.index() * n..(face.index() + 1) * n]
    }

    pub fn face(&self, face: CubeFace) -> Raster {
        Raster {
            height: self.size,
            width: self.size,
            channels: self.channels,
            data: self.face_slice(face).to_vec(),
        }
    }

    /// Keep a subset of channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<CubemapGrid> {
        if let Some(&c) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(invalid(format!("channel {c} out of range ({} channels)", self.channels)));
        }
        let mut out = CubemapGrid::zeros(self.size, channels.len());
        let plane = self.size * self.size;
        for face in CubeFace::ALL {
            for (k, &c) in channels.iter().enumerate() {
                let src = self.offset(face, c, 0, 0);
                let dst = out.offset(face, k, 0, 0);
                out.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Ok(out)
    }

    /// Sample every channel along `dir` (any nonzero vector). Bilinear
    /// sampling is face-local and border-clamped.
    pub fn sample(&self, dir: Vec3, filter: Filter, out: &mut [f64]) {
        let p = face_of_vector(dir);
        self.sample_at(p, filter, out);
    }

    pub fn sample_at(&self, p: FaceUV, filter: Filter, out: &mut [f64]) {
        let n = self.size;
        match filter {
            Filter::Nearest => {
                let (i, j) = p.nearest_pixel(n);
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    *o = self.get(p.face, c, i, j);
                }
            }
            Filter::Bilinear => {
                let (x, y) = p.pixel_coords(n);
                let fs = self.face_slice(p.face);
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    *o = bilinear_at(&fs[c * n * n..(c + 1) * n * n], n, n, x, y);
                }
            }
        }
    }

    pub fn sample_direction(&self, d: SphericalDirection, filter: Filter) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample(d.0, filter, &mut out);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CubemapGrid {
        CubemapGrid {
            size: self.size,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Equirectangular raster with `width = 2 * height`. Column `j` sits at
/// longitude `2 pi (j + 0.5) / W - pi`, row `i` at latitude
/// `pi/2 - pi (i + 0.5) / H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpGrid {
    raster: Raster,
}

impl ErpGrid {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.is_empty() {
            return Err(Error::EmptyRaster);
        }
        if raster.width != 2 * raster.height {
            return Err(shape_err(format!(
                "equirectangular width must be twice the height, got {}x{}",
                raster.height, raster.width
            )));
        }
        Ok(Self { raster })
    }

    pub fn zeros(height: usize, channels: usize) -> Self {
        Self {
            raster: Raster::zeros(height, 2 * height, channels),
        }
    }

    pub fn from_direction_fn(height: usize, channels: usize, mut f: impl FnMut(Vec3, &mut [f64])) -> Self {
        let mut e = Self::zeros(height, channels);
        let mut buf = vec![0.0; channels];
        for i in 0..height {
            for j in 0..2 * height {
                let (lon, lat) = e.lon_lat_of(i, j);
                f(SphericalDirection::from_lon_lat(lon, lat).0, &mut buf);
                for (c, &v) in buf.iter().enumerate() {
                    e.raster.set(c, i, j, v);
                }
            }
        }
        e
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn channels(&self) -> usize {
        self.raster.channels
    }

    pub fn lon_lat_of(&self, row: usize, col: usize) -> (f64, f64) {
        let w = self.width() as f64;
        let h = self.height() as f64;
        let lon = 2.0 * std::f64::consts::PI * (col as f64 + 0.5) / w - std::f64::consts::PI;
        let lat = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * (row as f64 + 0.5) / h;
        (lon, lat)
    }

    /// Continuous pixel coordinates `(x, y)` of a longitude/latitude, with
    /// pixel centers on integers.
    pub fn pixel_coords(&self, lon: f64, lat: f64) -> (f64, f64) {
        let x = (lon + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * self.width() as f64 - 0.5;
        let y = (std::f64::consts::FRAC_PI_2 - lat) / std::f64::consts::PI * self.height() as f64 - 0.5;
        (x, y)
    }

    /// Sample all channels at a direction. Longitude wraps, latitude clamps.
    pub fn sample(&self, dir: SphericalDirection, filter: Filter, out: &mut [f64]) {
        let (lon, lat) = dir.lon_lat();
        let (x, y) = self.pixel_coords(lon, lat);
        let (h, w) = (self.height(), self.width());
        match filter {
            Filter::Nearest => {
                let j = ((x + 0.5).floor() as i64).rem_euclid(w as i64) as usize;
                let i = ((y + 0.5).floor().max(0.0) as usize).min(h - 1);
                for (c, o) in out.iter_mut().enumerate().take(self.channels()) {
                    *o = self.raster.get(c, i, j);
                }
            }
            Filter::Bilinear => {
                let x0f = x.floor();
                let fx = x - x0f;
                let j0 = (x0f as i64).rem_euclid(w as i64) as usize;
                let j1 = (j0 + 1) % w;
                let yc = y.clamp(0.0, (h - 1) as f64);
                let i0 = yc.floor() as usize;
                let i1 = (i0 + 1).min(h - 1);
                let fy = yc - i0 as f64;
                for (c, o) in out.iter_mut().enumerate().take(self.channels()) {
                    let top = lerp(self.raster.get(c, i0, j0), self.raster.get(c, i0, j1), fx);
                    let bot = lerp(self.raster.get(c, i1, j0), self.raster.get(c, i1, j1), fx);
                    *o = lerp(top, bot, fy);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
