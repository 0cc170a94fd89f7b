//! RGB-D panorama to 3D: colored point clouds, stitched triangle meshes,
//! point-density statistics, and PLY / OBJ files.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::num::NonZeroUsize;
use std::path::Path;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthConvention, DepthCubemap};
use crate::error::{invalid, shape_err, Error, Result};
use crate::geometry::{pixel_direction, pixel_tangent, CubeFace, CubemapGrid, ErpGrid, FaceAdjacency, SphericalDirection, Vec3};

pub const DEFAULT_EDGE_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenePointCloud {
    pub positions: Vec<[f64; 3]>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

impl ScenePointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneMesh {
    pub vertices: ScenePointCloud,
    pub triangles: Vec<[usize; 3]>,
}

impl SceneMesh {
    /// `V - E + F` over the vertices referenced by at least one triangle.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = HashSet::new();
        let mut used = HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
                used.insert(a);
            }
        }
        used.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Every undirected edge is shared by exactly two triangles that
    /// traverse it in opposite directions.
    pub fn is_closed_and_oriented(&self) -> bool {
        let mut directed = HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                if !directed.insert((t[k], t[(k + 1) % 3])) {
                    return false;
                }
            }
        }
        directed.iter().all(|&(a, b)| directed.contains(&(b, a)))
    }
}

fn check_inputs(rgb: &CubemapGrid, depth: &DepthCubemap) -> Result<()> {
    depth.require(DepthConvention::ZDepth, "; convert with euclidean_to_z first")?;
    if rgb.size() != depth.size() {
        return Err(shape_err(format!("image face size {} vs depth face size {}", rgb.size(), depth.size())));
    }
    if rgb.channels() < 3 {
        return Err(shape_err(format!("color needs 3 channels, got {}", rgb.channels())));
    }
    depth.check_positive()
}

fn vertex_index(face: CubeFace, i: usize, j: usize, n: usize) -> usize {
    (face.index() * n + i) * n + j
}

/// Back-project every pixel: the unnormalized face ray scaled by Z-depth.
/// Points are ordered face, row, column.
pub fn lift_cubemap(rgb: &CubemapGrid, depth: &DepthCubemap) -> Result<ScenePointCloud> {
    check_inputs(rgb, depth)?;
    let n = rgb.size();
    let mut pc = ScenePointCloud {
        positions: Vec::with_capacity(6 * n * n),
        colors: Vec::with_capacity(6 * n * n),
    };
    for face in CubeFace::ALL {
        for i in 0..n {
            for j in 0..n {
                let (a, b) = pixel_tangent(i, j, n);
                let p = face.ray(a, b) * depth.get(face, i, j);
                pc.positions.push(p.to_array());
                pc.colors.push([0, 1, 2].map(|c| rgb.get(face, c, i, j)));
            }
        }
    }
    Ok(pc)
}

/// Orient `t` so its normal points away from the origin, judged on the
/// unit-depth cube positions `dirs`.
fn outward(t: [usize; 3], dirs: &[Vec3]) -> [usize; 3] {
    let (a, b, c) = (dirs[t[0]], dirs[t[1]], dirs[t[2]]);
    let normal = (b - a).cross(c - a);
    if normal.dot(a + b + c) >= 0.0 {
        t
    } else {
        [t[0], t[2], t[1]]
    }
}

/// Connectivity of the whole cube at face size `n`, before culling:
/// grid triangles on each face, strips across the 12 edges, and one
/// triangle at each of the 8 corners.
pub fn cube_triangulation(n: usize) -> Vec<[usize; 3]> {
    let dirs: Vec<Vec3> = CubeFace::ALL
        .iter()
        .flat_map(|&f| (0..n * n).map(move |k| {
            let (a, b) = pixel_tangent(k / n, k % n, n);
            f.ray(a, b)
        }))
        .collect();
    let mut tris = Vec::with_capacity(12 * n * n);
    for face in CubeFace::ALL {
        for i in 0..n.saturating_sub(1) {
            for j in 0..n - 1 {
                let v = |r, c| vertex_index(face, r, c, n);
                tris.push(outward([v(i, j), v(i + 1, j), v(i, j + 1)], &dirs));
                tris.push(outward([v(i, j + 1), v(i + 1, j), v(i + 1, j + 1)], &dirs));
            }
        }
    }
    for (face, edge, _) in FaceAdjacency::undirected_edges() {
        let side = |t: usize| {
            let (r, c) = edge.pixel(t, n);
            vertex_index(face, r, c, n)
        };
        let other = |t: usize| {
            let (f, r, c) = FaceAdjacency::across(face, edge, t, n);
            vertex_index(f, r, c, n)
        };
        for t in 0..n.saturating_sub(1) {
            tris.push(outward([side(t), side(t + 1), other(t)], &dirs));
            tris.push(outward([side(t + 1), other(t + 1), other(t)], &dirs));
        }
    }
    // Corner pixels grouped by the octant of their direction.
    let mut corners: BTreeMap<[bool; 3], Vec<usize>> = BTreeMap::new();
    for face in CubeFace::ALL {
        for (i, j) in [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
            let k = vertex_index(face, i, j, n);
            let d = dirs[k];
            let group = corners.entry([d.x > 0.0, d.y > 0.0, d.z > 0.0]).or_default();
            if !group.contains(&k) {
                group.push(k);
            }
        }
    }
    for group in corners.values() {
        if let [a, b, c] = group[..] {
            tris.push(outward([a, b, c], &dirs));
        }
    }
    tris
}

fn area(p: &[[f64; 3]], t: [usize; 3]) -> f64 {
    let v = |k: usize| Vec3::new(p[t[k]][0], p[t[k]][1], p[t[k]][2]);
    0.5 * (v(1) - v(0)).cross(v(2) - v(0)).norm()
}

/// Triangle mesh over the lifted points. Triangles whose largest-to-smallest
/// Z-depth ratio exceeds `edge_ratio` are treated as occlusion boundaries
/// and dropped, as are degenerate ones.
pub fn mesh_from_cubemap(rgb: &CubemapGrid, depth: &DepthCubemap, edge_ratio: f64) -> Result<SceneMesh> {
    if !(edge_ratio > 1.0) {
        return Err(invalid(format!("edge ratio must exceed 1, got {edge_ratio}")));
    }
    let vertices = lift_cubemap(rgb, depth)?;
    let n = rgb.size();
    if n < 2 {
        return Err(shape_err("meshing needs faces of at least 2x2 pixels"));
    }
    let z: Vec<f64> = depth.grid().data().to_vec();
    let triangles = cube_triangulation(n)
        .into_iter()
        .filter(|t| {
            let (lo, hi) = t.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &k| (lo.min(z[k]), hi.max(z[k])));
            hi / lo <= edge_ratio && area(&vertices.positions, *t) > 1e-12
        })
        .collect();
    Ok(SceneMesh { vertices, triangles })
}

/// Back-project an equirectangular panorama with Euclidean depth.
pub fn lift_erp(rgb: &ErpGrid, depth: &ErpGrid) -> Result<ScenePointCloud> {
    if rgb.height() != depth.height() {
        return Err(shape_err(format!("image height {} vs depth height {}", rgb.height(), depth.height())));
    }
    if rgb.channels() < 3 || depth.channels() != 1 {
        return Err(shape_err("expected 3-channel color and 1-channel depth"));
    }
    let (h, w) = (rgb.height(), rgb.width());
    let mut pc = ScenePointCloud {
        positions: Vec::with_capacity(h * w),
        colors: Vec::with_capacity(h * w),
    };
    for i in 0..h {
        for j in 0..w {
            let (lon, lat) = rgb.lon_lat_of(i, j);
            let d = SphericalDirection::from_lon_lat(lon, lat).0;
            pc.positions.push((d * depth.raster().get(0, i, j)).to_array());
            pc.colors.push([0, 1, 2].map(|c| rgb.raster().get(c, i, j)));
        }
    }
    Ok(pc)
}

pub const LATITUDE_BANDS: usize = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub k: usize,
    /// Coefficient of variation of each point's mean distance to its `k`
    /// nearest neighbors.
    pub cv_nn: f64,
    /// Points per latitude band (north to south, 10 degrees each) divided by
    /// the band's share of the sphere; 1 everywhere for a uniform sampling.
    pub band_profile: Vec<f64>,
}

impl DensityReport {
    /// Mean of the two polar bands.
    pub fn pole_density(&self) -> f64 {
        0.5 * (self.band_profile[0] + self.band_profile[LATITUDE_BANDS - 1])
    }
}

pub fn density_uniformity(pc: &ScenePointCloud, k: usize) -> Result<DensityReport> {
    let n = pc.len();
    if k == 0 || n < k + 1 {
        return Err(invalid(format!("{n} points are too few for {k} neighbors")));
    }
    let tree: ImmutableKdTree<f64, u64, 3, 32> = ImmutableKdTree::new_from_slice(&pc.positions);
    let want = NonZeroUsize::new(k + 1).expect("k + 1 > 0");
    let means: Vec<f64> = pc
        .positions
        .par_iter()
        .map(|p| {
            let nn = tree.nearest_n::<SquaredEuclidean>(p, want);
            // The query point itself comes back at distance zero.
            nn.iter().skip(1).map(|m| m.distance.sqrt()).sum::<f64>() / k as f64
        })
        .collect();
    let mu = means.iter().sum::<f64>() / n as f64;
    if !(mu > 0.0) {
        return Err(invalid("all points coincide"));
    }
    let var = means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / n as f64;
    let mut counts = vec![0usize; LATITUDE_BANDS];
    for p in &pc.positions {
        let v = Vec3::new(p[0], p[1], p[2]);
        let r = v.norm();
        if r == 0.0 {
            continue;
        }
        let lat = (v.y / r).clamp(-1.0, 1.0).asin();
        let band = (((std::f64::consts::FRAC_PI_2 - lat) / std::f64::consts::PI) * LATITUDE_BANDS as f64) as usize;
        counts[band.min(LATITUDE_BANDS - 1)] += 1;
    }
    let band_profile = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let top = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * b as f64 / LATITUDE_BANDS as f64;
            let bottom = top - std::f64::consts::PI / LATITUDE_BANDS as f64;
            let share = 0.5 * (top.sin() - bottom.sin());
            (c as f64 / n as f64) / share
        })
        .collect();
    Ok(DensityReport {
        k,
        cv_nn: var.sqrt() / mu,
        band_profile,
    })
}

/// Unit-depth lift of a cubemap at face size `n`: pixel directions scaled
/// onto the unit sphere.
pub fn unit_sphere_cubemap_points(n: usize) -> ScenePointCloud {
    let positions: Vec<[f64; 3]> = CubeFace::ALL
        .iter()
        .flat_map(|&f| (0..n * n).map(move |k| pixel_direction(f, k / n, k % n, n).to_array()))
        .collect();
    let colors = vec![[0.0; 3]; positions.len()];
    ScenePointCloud { positions, colors }
}

fn color_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary little-endian PLY with float positions and byte colors.
pub fn write_ply(path: &Path, pc: &ScenePointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(64 + 15 * pc.len());
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )?;
    for (p, c) in pc.positions.iter().zip(&pc.colors) {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(c.iter().map(|&v| color_byte(v)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads files written by [`write_ply`]; positions come back at `f32`
/// precision and colors as `byte / 255`.
pub fn read_ply(path: &Path) -> Result<ScenePointCloud> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut count = None;
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("PLY header ended early".into()));
        }
        let l = line.trim();
        if l == "end_header" {
            break;
        }
        if let Some(rest) = l.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse::<usize>().map_err(|e| Error::Format(format!("vertex count: {e}")))?);
        } else if l.starts_with("format") && l != "format binary_little_endian 1.0" {
            return Err(Error::Format(format!("unsupported PLY format: {l}")));
        }
    }
    let count = count.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 15 * count {
        return Err(Error::Format(format!("expected {} vertex bytes, found {}", 15 * count, body.len())));
    }
    let mut pc = ScenePointCloud::default();
    for rec in body.chunks_exact(15) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64;
        pc.positions.push([f(0), f(1), f(2)]);
        pc.colors.push([rec[12], rec[13], rec[14]].map(|b| b as f64 / 255.0));
    }
    Ok(pc)
}

/// Wavefront OBJ with per-vertex color (`v x y z r g b`) and 1-based faces.
/// Numbers are written in shortest round-trip form.
pub fn write_obj(path: &Path, mesh: &SceneMesh) -> Result<()> {
    let mut out = String::with_capacity(48 * mesh.vertices.len());
    use std::fmt::Write as _;
    for (p, c) in mesh.vertices.positions.iter().zip(&mesh.vertices.colors) {
        let _ = writeln!(out, "v {} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<SceneMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut mesh = SceneMesh::default();
    let bad = |no: usize, what: &str| Error::Format(format!("OBJ line {}: {what}", no + 1));
    for (no, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals = it.map(|s| s.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| bad(no, &e.to_string()))?;
                match vals[..] {
                    [x, y, z] => {
                        mesh.vertices.positions.push([x, y, z]);
                        mesh.vertices.colors.push([1.0; 3]);
                    }
                    [x, y, z, r, g, b] => {
                        mesh.vertices.positions.push([x, y, z]);
                        mesh.vertices.colors.push([r, g, b]);
                    }
                    _ => return Err(bad(no, "vertex needs 3 or 6 numbers")),
                }
            }
            Some("f") => {
                let idx = it
                    .map(|s| s.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(no, &e.to_string()))?;
                match idx[..] {
                    [a, b, c] if a > 0 && b > 0 && c > 0 => mesh.triangles.push([a - 1, b - 1, c - 1]),
                    _ => return Err(bad(no, "only triangles with 1-based indices are supported")),
                }
            }
            _ => {}
        }
    }
    let nv = mesh.vertices.len();
    if mesh.triangles.iter().flatten().any(|&k| k >= nv) {
        return Err(Error::Format("face index out of range".into()));
    }
    Ok(mesh)
}
