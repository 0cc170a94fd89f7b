//! Image files: 8-bit color strips and face directories, 16-bit depth with a
//! JSON sidecar describing how to decode it.
//!
//! Strips store the faces left to right in the order Front, Right, Back,
//! Left, Up, Down, each `H x H`.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, Rgba};
use serde::{Deserialize, Serialize};

use crate::depth::{DepthConvention, DepthCubemap};
use crate::error::{invalid, shape_err, Error, Result};
use crate::geometry::{CubeFace, CubemapGrid, ErpGrid, Raster};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a 1-, 3- or 4-channel raster in `[0, 1]` as an 8-bit PNG. Values
/// are clamped and rounded to the nearest of 256 levels.
pub fn save_png8(path: &Path, r: &Raster) -> Result<()> {
    let (w, h) = (r.width as u32, r.height as u32);
    let px = |i: u32, j: u32, c: usize| to_u8(r.get(c, i as usize, j as usize));
    match r.channels {
        1 => ImageBuffer::from_fn(w, h, |j, i| Luma([px(i, j, 0)])).save(path)?,
        3 => ImageBuffer::from_fn(w, h, |j, i| Rgb([px(i, j, 0), px(i, j, 1), px(i, j, 2)])).save(path)?,
        4 => ImageBuffer::from_fn(w, h, |j, i| Rgba([px(i, j, 0), px(i, j, 1), px(i, j, 2), px(i, j, 3)])).save(path)?,
        c => return Err(invalid(format!("cannot write {c}-channel image"))),
    }
    Ok(())
}

/// Read an 8-bit PNG as `value / 255`. Grayscale stays one channel, alpha is
/// kept, everything else becomes RGB.
pub fn load_png8(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img.color().channel_count() {
        1 => (1, img.into_luma8().into_raw()),
        2 | 4 => (4, img.into_rgba8().into_raw()),
        _ => (3, img.into_rgb8().into_raw()),
    };
    Ok(Raster::from_fn(h, w, channels, |c, i, j| bytes[(i * w + j) * channels + c] as f64 / 255.0))
}

/// Faces side by side in strip order.
pub fn cubemap_to_strip(cube: &CubemapGrid) -> Raster {
    let n = cube.size();
    Raster::from_fn(n, 6 * n, cube.channels(), |c, i, j| cube.get(CubeFace::ALL[j / n], c, i, j % n))
}

pub fn strip_to_cubemap(strip: &Raster) -> Result<CubemapGrid> {
    let n = strip.height;
    if n == 0 || strip.width != 6 * n {
        return Err(shape_err(format!("a strip must be 6H x H, got {}x{}", strip.width, strip.height)));
    }
    let mut cube = CubemapGrid::zeros(n, strip.channels);
    for face in CubeFace::ALL {
        let off = face.index() * n;
        for c in 0..strip.channels {
            for i in 0..n {
                for j in 0..n {
                    cube.set(face, c, i, j, strip.get(c, i, off + j));
                }
            }
        }
    }
    Ok(cube)
}

pub fn save_strip_png(path: &Path, cube: &CubemapGrid) -> Result<()> {
    save_png8(path, &cubemap_to_strip(cube))
}

pub fn load_strip_png(path: &Path) -> Result<CubemapGrid> {
    strip_to_cubemap(&load_png8(path)?)
}

/// Lower-case face name used for per-face files, e.g. `front.png`.
pub fn face_file(dir: &Path, face: CubeFace) -> PathBuf {
    dir.join(format!("{}.png", face.name().to_lowercase()))
}

pub fn save_face_dir(dir: &Path, cube: &CubemapGrid) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for face in CubeFace::ALL {
        save_png8(&face_file(dir, face), &cube.face(face))?;
    }
    Ok(())
}

pub fn load_face_dir(dir: &Path) -> Result<CubemapGrid> {
    let missing: Vec<PathBuf> = CubeFace::ALL.iter().map(|&f| face_file(dir, f)).filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let faces = CubeFace::ALL.iter().map(|&f| load_png8(&face_file(dir, f))).collect::<Result<Vec<_>>>()?;
    CubemapGrid::from_faces(&faces)
}

pub fn save_erp_png(path: &Path, erp: &ErpGrid) -> Result<()> {
    save_png8(path, erp.raster())
}

pub fn load_erp_png(path: &Path) -> Result<ErpGrid> {
    ErpGrid::new(load_png8(path)?)
}

/// Decoding rule for a 16-bit depth image: `depth = offset + scale * q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPngMeta {
    pub convention: DepthConvention,
    pub scale: f64,
    pub offset: f64,
}

impl DepthPngMeta {
    /// Spread `[min, max]` over the full 16-bit range.
    pub fn fit(values: &[f64], convention: DepthConvention) -> Result<Self> {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite {
                stage: "depth export".into(),
                detail: format!("range [{lo}, {hi}]"),
            });
        }
        let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
        Ok(Self { convention, scale, offset: lo })
    }

    fn encode(&self, v: f64) -> u16 {
        ((v - self.offset) / self.scale).round().clamp(0.0, 65535.0) as u16
    }

    fn decode(&self, q: u16) -> f64 {
        self.offset + self.scale * q as f64
    }
}

/// Sidecar path: the image path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// A single-channel 16-bit depth image and its decoding rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthRaster {
    pub raster: Raster,
    pub meta: DepthPngMeta,
}

/// Write with an explicit decoding rule. Re-saving a loaded depth with its
/// own rule reproduces the file exactly.
pub fn save_depth_raster_png16(path: &Path, r: &Raster, meta: &DepthPngMeta) -> Result<()> {
    if r.channels != 1 {
        return Err(shape_err(format!("depth images have one channel, got {}", r.channels)));
    }
    if !(meta.scale > 0.0) {
        return Err(invalid(format!("depth scale {} must be positive", meta.scale)));
    }
    let img = ImageBuffer::from_fn(r.width as u32, r.height as u32, |j, i| Luma([meta.encode(r.get(0, i as usize, j as usize))]));
    img.save(path)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_depth_raster_png16(path: &Path) -> Result<DepthRaster> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingFiles(vec![side]));
    }
    let meta: DepthPngMeta = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
    let img = image::open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let raster = Raster::from_fn(h, w, 1, |_, i, j| meta.decode(raw[i * w + j]));
    Ok(DepthRaster { raster, meta })
}

/// Depth cubemap loaded from a 16-bit strip, with the rule that decoded it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDepth {
    pub depth: DepthCubemap,
    pub meta: DepthPngMeta,
}

impl LoadedDepth {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_depth_raster_png16(path, &cubemap_to_strip(self.depth.grid()), &self.meta)
    }
}

/// Write a depth cubemap as a 16-bit strip quantized over its own range.
pub fn save_depth_png16(path: &Path, depth: &DepthCubemap) -> Result<DepthPngMeta> {
    let meta = DepthPngMeta::fit(depth.grid().data(), depth.convention())?;
    save_depth_raster_png16(path, &cubemap_to_strip(depth.grid()), &meta)?;
    Ok(meta)
}

pub fn load_depth_png16(path: &Path) -> Result<LoadedDepth> {
    let DepthRaster { raster, meta } = load_depth_raster_png16(path)?;
    let grid = strip_to_cubemap(&raster)?;
    Ok(LoadedDepth {
        depth: DepthCubemap::new(grid, meta.convention)?,
        meta,
    })
}
