use serde::{Deserialize, Serialize};

use super::CubeFace;

/// A face edge in image coordinates: `Top` is `v = 0`, `Left` is `u = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Right,
    Bottom,
    Left,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Top, Edge::Right, Edge::Bottom, Edge::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Outward step `(dcol, drow)` in image coordinates.
    pub fn outward(self) -> (i32, i32) {
        match self {
            Edge::Top => (0, -1),
            Edge::Right => (1, 0),
            Edge::Bottom => (0, 1),
            Edge::Left => (-1, 0),
        }
    }

    /// Pixel `(row, col)` at clockwise position `t` along the edge. Walking
    /// `t = 0..n` traverses the face boundary clockwise as seen from the
    /// cube center: left-to-right along the top, top-to-bottom along the
    /// right, and so on.
    pub fn pixel(self, t: usize, n: usize) -> (usize, usize) {
        match self {
            Edge::Top => (0, t),
            Edge::Right => (t, n - 1),
            Edge::Bottom => (n - 1, n - 1 - t),
            Edge::Left => (n - 1 - t, 0),
        }
    }
}

/// Where crossing an edge leads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbor {
    pub face: CubeFace,
    pub edge: Edge,
    /// Clockwise quarter turns mapping image-plane directions on the source
    /// face onto the neighbor's image plane (0..4, i.e. 0/90/180/270 deg).
    pub quarter_turns: u8,
}

impl Neighbor {
    pub fn rotation_degrees(&self) -> u32 {
        self.quarter_turns as u32 * 90
    }
}

/// Static `(face, edge) -> neighbor` table for the cube.
///
/// Shared edges are always traversed in opposite clockwise directions by the
/// two faces, so position `t` on one side meets position `n - 1 - t` on the
/// other.
#[derive(Debug, Clone, Copy)]
pub struct FaceAdjacency;

const fn nb(face: CubeFace, edge: Edge, quarter_turns: u8) -> Neighbor {
    Neighbor {
        face,
        edge,
        quarter_turns,
    }
}

use CubeFace as F;
use Edge as E;

// Indexed [face][edge] with edges in Top, Right, Bottom, Left order.
const TABLE: [[Neighbor; 4]; 6] = [
    // Front
    [nb(F::Up, E::Bottom, 0), nb(F::Right, E::Left, 0), nb(F::Down, E::Top, 0), nb(F::Left, E::Right, 0)],
    // Right
    [nb(F::Up, E::Right, 3), nb(F::Back, E::Left, 0), nb(F::Down, E::Right, 1), nb(F::Front, E::Right, 0)],
    // Back
    [nb(F::Up, E::Top, 2), nb(F::Left, E::Left, 0), nb(F::Down, E::Bottom, 2), nb(F::Right, E::Right, 0)],
    // Left
    [nb(F::Up, E::Left, 1), nb(F::Front, E::Left, 0), nb(F::Down, E::Left, 3), nb(F::Back, E::Right, 0)],
    // Up
    [nb(F::Back, E::Top, 2), nb(F::Right, E::Top, 1), nb(F::Front, E::Top, 0), nb(F::Left, E::Top, 3)],
    // Down
    [nb(F::Front, E::Bottom, 0), nb(F::Right, E::Bottom, 3), nb(F::Back, E::Bottom, 2), nb(F::Left, E::Bottom, 1)],
];

impl FaceAdjacency {
    pub fn neighbor(face: CubeFace, edge: Edge) -> Neighbor {
        TABLE[face.index()][edge.index()]
    }

    /// All 24 directed entries.
    pub fn entries() -> impl Iterator<Item = (CubeFace, Edge, Neighbor)> {
        CubeFace::ALL
            .into_iter()
            .flat_map(|f| Edge::ALL.into_iter().map(move |e| (f, e, Self::neighbor(f, e))))
    }

    /// The 12 undirected cube edges, each reported once from the face with
    /// the lower storage index.
    pub fn undirected_edges() -> Vec<(CubeFace, Edge, Neighbor)> {
        Self::entries()
            .filter(|(f, e, n)| (f.index(), e.index()) < (n.face.index(), n.edge.index()))
            .collect()
    }

    /// Pixel across the seam from the boundary pixel at clockwise position
    /// `t` of `edge` on `face`.
    pub fn across(face: CubeFace, edge: Edge, t: usize, n: usize) -> (CubeFace, usize, usize) {
        let nbr = Self::neighbor(face, edge);
        let (r, c) = nbr.edge.pixel(n - 1 - t, n);
        (nbr.face, r, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_of, face_of_vector, FaceUV};

    fn rotate_cw(d: (i32, i32), k: u8) -> (i32, i32) {
        let mut d = d;
        for _ in 0..k {
            d = (-d.1, d.0);
        }
        d
    }

    #[test]
    fn table_is_an_involution() {
        for (f, e, n) in FaceAdjacency::entries() {
            let back = FaceAdjacency::neighbor(n.face, n.edge);
            assert_eq!((back.face, back.edge), (f, e));
            assert_eq!((back.quarter_turns + n.quarter_turns) % 4, 0);
        }
        assert_eq!(FaceAdjacency::undirected_edges().len(), 12);
    }

    #[test]
    fn rotation_maps_outward_to_inward() {
        for (_, e, n) in FaceAdjacency::entries() {
            let (dx, dy) = n.edge.outward();
            assert_eq!(rotate_cw(e.outward(), n.quarter_turns), (-dx, -dy));
        }
    }

    /// Step one pixel outward from each boundary pixel and resolve the
    /// landing spot geometrically; it must match the table.
    #[test]
    fn table_matches_geometry() {
        let n = 16;
        for (face, edge, _) in FaceAdjacency::entries() {
            for t in 0..n {
                let (r, c) = edge.pixel(t, n);
                let (dc, dr) = edge.outward();
                let u = (c as f64 + dc as f64 * 0.5 + 0.5 + dc as f64 * 1e-9) / n as f64;
                let v = (r as f64 + dr as f64 * 0.5 + 0.5 + dr as f64 * 1e-9) / n as f64;
                let (a, b) = FaceUV::new(face, u, v).tangent();
                let hit = face_of_vector(face.ray(a, b));
                let (g, gr, gc) = FaceAdjacency::across(face, edge, t, n);
                assert_eq!(hit.face, g, "{face:?} {edge:?} t={t}");
                let (hr, hc) = hit.nearest_pixel(n);
                assert_eq!((hr, hc), (gr, gc), "{face:?} {edge:?} t={t}");
            }
        }
    }

    #[test]
    fn seam_midpoints_coincide() {
        // The shared boundary point between paired pixels has one direction.
        let n = 8;
        for (face, edge, _) in FaceAdjacency::entries() {
            for t in 0..n {
                let (r, c) = edge.pixel(t, n);
                let (dc, dr) = edge.outward();
                let p = FaceUV::new(face, (c as f64 + 0.5 + 0.5 * dc as f64) / n as f64, (r as f64 + 0.5 + 0.5 * dr as f64) / n as f64);
                let (g, gr, gc) = FaceAdjacency::across(face, edge, t, n);
                let nbr = FaceAdjacency::neighbor(face, edge);
                let (gdc, gdr) = nbr.edge.outward();
                let q = FaceUV::new(g, (gc as f64 + 0.5 + 0.5 * gdc as f64) / n as f64, (gr as f64 + 0.5 + 0.5 * gdr as f64) / n as f64);
                let angle = direction_of(p).0.angle_to(direction_of(q).0);
                assert!(angle < 1e-9, "{face:?} {edge:?} t={t}: {angle}");
            }
        }
    }
}
