use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CubeFace, CubemapGrid, ErpGrid, Filter, Raster, SphericalDirection, Vec3};
use crate::error::{invalid, Error, Result};

pub fn erp_to_cubemap(erp: &ErpGrid, face_size: usize, filter: Filter) -> Result<CubemapGrid> {
    if face_size == 0 {
        return Err(invalid("face_size must be at least 1"));
    }
    let ch = erp.channels();
    let n = face_size;
    let mut grid = CubemapGrid::zeros(n, ch);
    let plane = n * n;
    grid.data_mut()
        .par_chunks_mut(ch * plane)
        .enumerate()
        .for_each(|(fi, face_data)| {
            let face = CubeFace::ALL[fi];
            let mut buf = vec![0.0; ch];
            for i in 0..n {
                for j in 0..n {
                    let d = super::pixel_direction(face, i, j, n);
                    erp.sample(super::SphericalDirection(d), filter, &mut buf);
                    for c in 0..ch {
                        face_data[c * plane + i * n + j] = buf[c];
                    }
                }
            }
        });
    Ok(grid)
}

pub fn cubemap_to_erp(cube: &CubemapGrid, erp_height: usize, filter: Filter) -> Result<ErpGrid> {
    if erp_height == 0 || cube.size() == 0 {
        return Err(Error::EmptyRaster);
    }
    let (h, w, ch) = (erp_height, 2 * erp_height, cube.channels());
    let template = ErpGrid::zeros(h, 0);
    let mut rows = vec![0.0; h * w * ch];
    // Row-major scratch [i][j][c], transposed into planar storage below.
    rows.par_chunks_mut(w * ch).enumerate().for_each(|(i, row)| {
        for j in 0..w {
            let (lon, lat) = template.lon_lat_of(i, j);
            let d = SphericalDirection::from_lon_lat(lon, lat);
            cube.sample(d.0, filter, &mut row[j * ch..(j + 1) * ch]);
        }
    });
    let raster = Raster::from_fn(h, w, ch, |c, i, j| rows[(i * w + j) * ch + c]);
    ErpGrid::new(raster)
}

/// Pinhole camera orientation and field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub yaw: f64,
    pub pitch: f64,
    pub fov: f64,
    pub size: usize,
}

impl ViewSpec {
    /// Camera `(right, up, forward)`. Yaw turns from `Front` toward `Right`,
    /// pitch tilts toward `Up`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vec3::new(cp * sy, sp, cp * cy);
        let right = Vec3::new(cy, 0.0, -sy);
        let up = Vec3::new(-sp * sy, cp, -sp * cy);
        (right, up, forward)
    }

    /// Unnormalized ray through the center of output pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Vec3 {
        let (right, up, forward) = self.basis();
        let half = (self.fov * 0.5).tan();
        let a = (2.0 * (col as f64 + 0.5) / self.size as f64 - 1.0) * half;
        let b = (1.0 - 2.0 * (row as f64 + 0.5) / self.size as f64) * half;
        forward + right * a + up * b
    }
}

pub fn perspective_view(cube: &CubemapGrid, view: ViewSpec, filter: Filter) -> Result<Raster> {
    if !(view.fov > 0.0 && view.fov < std::f64::consts::PI) {
        return Err(invalid(format!("fov must lie in (0, pi), got {}", view.fov)));
    }
    if view.size == 0 {
        return Err(invalid("output size must be at least 1"));
    }
    let (n, ch) = (view.size, cube.channels());
    let mut rows = vec![0.0; n * n * ch];
    rows.par_chunks_mut(n * ch).enumerate().for_each(|(i, row)| {
        for j in 0..n {
            cube.sample(view.ray(i, j), filter, &mut row[j * ch..(j + 1) * ch]);
        }
    });
    Ok(Raster::from_fn(n, n, ch, |c, i, j| rows[(i * n + j) * ch + c]))
}

/// Rotate the panorama content by +90 deg of yaw: whatever was seen at `Front`
/// is afterwards seen at `Right`. Exact pixel permutation; `Up` and `Down`
/// turn in-plane.
pub fn rotate_yaw90(cube: &CubemapGrid) -> CubemapGrid {
    let n = cube.size();
    let ch = cube.channels();
    let mut out = CubemapGrid::zeros(n, ch);
    use CubeFace::*;
    for (dst, src) in [(Right, Front), (Back, Right), (Left, Back), (Front, Left)] {
        out.face_slice_mut(dst).copy_from_slice(cube.face_slice(src));
    }
    for c in 0..ch {
        for i in 0..n {
            for j in 0..n {
                out.set(Up, c, i, j, cube.get(Up, c, j, n - 1 - i));
                out.set(Down, c, i, j, cube.get(Down, c, n - 1 - j, i));
            }
        }
    }
    out
}
