//! Positional encodings appended to every face before the network sees it.
//!
//! `Xyz` stores the unit viewing direction of each pixel, which is continuous
//! across seams. `Uv` stores the per-face `(u, v)` and jumps at every seam;
//! it is kept as the ablation baseline.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{pixel_direction, CubeFace, CubemapGrid, FaceAdjacency, FaceUV};
use crate::sync::MultiPlaneTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Xyz,
    Uv,
}

impl EncodingKind {
    pub fn channels(self) -> usize {
        match self {
            EncodingKind::Xyz => 3,
            EncodingKind::Uv => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub kind: EncodingKind,
    /// Batch of one, `[1, 6, C, H, W]`.
    pub data: MultiPlaneTensor,
}

impl PositionalEncoding {
    pub fn new(kind: EncodingKind, face_size: usize) -> Result<Self> {
        match kind {
            EncodingKind::Xyz => xyz_encoding(face_size),
            EncodingKind::Uv => uv_encoding(face_size),
        }
    }

    pub fn face_size(&self) -> usize {
        self.data.size()
    }

    pub fn to_cubemap(&self) -> CubemapGrid {
        self.data.to_cubemap(0)
    }

    /// Encoding vector of one pixel.
    pub fn at(&self, face: CubeFace, row: usize, col: usize) -> Vec<f64> {
        (0..self.data.channels()).map(|c| self.data.get(0, face, c, row, col)).collect()
    }

    /// Largest Euclidean distance between encodings of two pixels that touch
    /// across a cube seam.
    pub fn max_seam_jump(&self) -> f64 {
        let n = self.face_size();
        let mut worst: f64 = 0.0;
        for (face, edge, _) in FaceAdjacency::undirected_edges() {
            for t in 0..n {
                let (r, c) = edge.pixel(t, n);
                let (nf, nr, nc) = FaceAdjacency::across(face, edge, t, n);
                worst = worst.max(dist(&self.at(face, r, c), &self.at(nf, nr, nc)));
            }
        }
        worst
    }

    /// Largest distance between a boundary pixel and its inward neighbor on
    /// the same face: the within-face step at the same place a seam pair
    /// straddles.
    pub fn max_edge_inward_jump(&self) -> f64 {
        let n = self.face_size();
        let mut worst: f64 = 0.0;
        for face in CubeFace::ALL {
            for edge in crate::geometry::Edge::ALL {
                let (dc, dr) = edge.outward();
                for t in 0..n {
                    let (r, c) = edge.pixel(t, n);
                    let (ri, ci) = ((r as i32 - dr) as usize, (c as i32 - dc) as usize);
                    worst = worst.max(dist(&self.at(face, r, c), &self.at(face, ri, ci)));
                }
            }
        }
        worst
    }

    /// Largest distance between horizontally or vertically adjacent pixels
    /// of the same face.
    pub fn max_interior_jump(&self) -> f64 {
        let n = self.face_size();
        let mut worst: f64 = 0.0;
        for face in CubeFace::ALL {
            for i in 0..n {
                for j in 0..n {
                    let here = self.at(face, i, j);
                    if j + 1 < n {
                        worst = worst.max(dist(&here, &self.at(face, i, j + 1)));
                    }
                    if i + 1 < n {
                        worst = worst.max(dist(&here, &self.at(face, i + 1, j)));
                    }
                }
            }
        }
        worst
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_size(face_size: usize) -> Result<()> {
    if face_size == 0 {
        return Err(invalid("face size must be at least 1"));
    }
    Ok(())
}

/// Unit viewing direction of every pixel center.
pub fn xyz_encoding(face_size: usize) -> Result<PositionalEncoding> {
    check_size(face_size)?;
    let n = face_size;
    let mut grid = CubemapGrid::zeros(n, 3);
    for face in CubeFace::ALL {
        for i in 0..n {
            for j in 0..n {
                let d = pixel_direction(face, i, j, n);
                grid.set(face, 0, i, j, d.x);
                grid.set(face, 1, i, j, d.y);
                grid.set(face, 2, i, j, d.z);
            }
        }
    }
    Ok(PositionalEncoding {
        kind: EncodingKind::Xyz,
        data: MultiPlaneTensor::from_cubemaps(&[grid])?,
    })
}

/// Per-face `(u, v)` of every pixel center; identical on all faces.
pub fn uv_encoding(face_size: usize) -> Result<PositionalEncoding> {
    check_size(face_size)?;
    let n = face_size;
    let mut grid = CubemapGrid::zeros(n, 2);
    for face in CubeFace::ALL {
        for i in 0..n {
            for j in 0..n {
                let p = FaceUV::pixel_center(face, i, j, n);
                grid.set(face, 0, i, j, p.u);
                grid.set(face, 1, i, j, p.v);
            }
        }
    }
    Ok(PositionalEncoding {
        kind: EncodingKind::Uv,
        data: MultiPlaneTensor::from_cubemaps(&[grid])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotate_yaw90;
    use std::collections::HashSet;

    #[test]
    fn xyz_front_center_and_antipodes() {
        let e = xyz_encoding(5).unwrap();
        assert_eq!(e.at(CubeFace::Front, 2, 2), vec![0.0, 0.0, 1.0]);
        let back = e.at(CubeFace::Back, 2, 2);
        assert_eq!(back, vec![0.0, 0.0, -1.0]);
        // Pixel (i, j) on Front is antipodal to pixel (n-1-i, j) on Back.
        for i in 0..5 {
            for j in 0..5 {
                let f = e.at(CubeFace::Front, i, j);
                let b = e.at(CubeFace::Back, 4 - i, j);
                assert_eq!(f, b.iter().map(|v| -v).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn xyz_is_unit_and_in_range() {
        let e = xyz_encoding(16).unwrap();
        let g = e.to_cubemap();
        for face in CubeFace::ALL {
            for i in 0..16 {
                for j in 0..16 {
                    let v: Vec<f64> = (0..3).map(|c| g.get(face, c, i, j)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!((norm - 1.0).abs() < 1e-9);
                    assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
                }
            }
        }
    }

    #[test]
    fn xyz_is_injective() {
        let n = 24;
        let e = xyz_encoding(n).unwrap();
        let mut seen = HashSet::new();
        for face in CubeFace::ALL {
            for i in 0..n {
                for j in 0..n {
                    let key: Vec<u64> = e.at(face, i, j).iter().map(|v| v.to_bits()).collect();
                    assert!(seen.insert(key));
                }
            }
        }
        assert_eq!(seen.len(), 6 * n * n);
    }

    #[test]
    fn uv_faces_are_identical() {
        let e = uv_encoding(8).unwrap();
        assert_eq!(e.at(CubeFace::Front, 0, 0), vec![0.5 / 8.0, 0.5 / 8.0]);
        let g = e.to_cubemap();
        for face in CubeFace::ALL {
            assert_eq!(g.face_slice(face), g.face_slice(CubeFace::Front));
        }
        assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn xyz_seams_are_as_smooth_as_the_interior() {
        let e = xyz_encoding(64).unwrap();
        let (seam, edge) = (e.max_seam_jump(), e.max_edge_inward_jump());
        assert!(seam <= edge * 2f64.sqrt(), "seam {seam} edge {edge}");
        assert!(edge <= seam * 2f64.sqrt(), "seam {seam} edge {edge}");
        // Face centers are the coarsest part of the cube, so no seam step
        // exceeds the largest interior step.
        assert!(seam <= e.max_interior_jump());
    }

    #[test]
    fn uv_seams_jump_by_almost_one() {
        let n = 64;
        let uv = uv_encoding(n).unwrap();
        let xyz = xyz_encoding(n).unwrap();
        // Front/Right: u snaps from (n - 0.5)/n to 0.5/n.
        let jump = uv.at(CubeFace::Front, 10, n - 1)[0] - uv.at(CubeFace::Right, 10, 0)[0];
        assert!((jump - (1.0 - 1.0 / n as f64)).abs() < 1e-12);
        assert!(uv.max_seam_jump() > (n as f64 / 4.0) * xyz.max_seam_jump());
    }

    #[test]
    fn seam_jump_shrinks_with_resolution() {
        let a = xyz_encoding(16).unwrap().max_seam_jump();
        let b = xyz_encoding(32).unwrap().max_seam_jump();
        assert!((a / b - 2.0).abs() < 0.1, "{a} {b}");
        let ua = uv_encoding(16).unwrap().max_seam_jump();
        let ub = uv_encoding(32).unwrap().max_seam_jump();
        assert!(ua > 0.9 && ub > 0.9);
    }

    #[test]
    fn yaw_rotation_acts_on_xyz_vectors() {
        // Rotating content by +90 deg yaw maps direction d to R d with
        // R (x, y, z) = (z, y, -x): Front (+Z) goes to Right (+X).
        let n = 9;
        let g = xyz_encoding(n).unwrap().to_cubemap();
        let rotated = rotate_yaw90(&g);
        let expect = g.clone();
        for face in CubeFace::ALL {
            for i in 0..n {
                for j in 0..n {
                    let src = [0, 1, 2].map(|c| rotated.get(face, c, i, j));
                    let here = [0, 1, 2].map(|c| expect.get(face, c, i, j));
                    // The rotated encoding holds the encoding that used to be
                    // at R^-1 d, i.e. (-z, y, x) of the current direction.
                    assert_eq!(src, [-here[2], here[1], here[0]]);
                }
            }
        }
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(xyz_encoding(0).is_err());
        assert!(uv_encoding(0).is_err());
    }
}
