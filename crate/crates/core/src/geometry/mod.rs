//! Cube map geometry.
//!
//! World frame: right-handed, `+Y` up. Face normals are `Front = +Z`,
//! `Right = +X`, `Back = -Z`, `Left = -X`, `Up = +Y`, `Down = -Y`. Each face
//! carries a `(right, up, normal)` frame chosen so that, seen from the cube
//! center, `u` grows to the right and `v` grows downward. A face pixel with
//! coordinates `(u, v)` looks along
//!
//! ```text
//! right * (2u - 1) + up * (1 - 2v) + normal
//! ```
//!
//! Pixel centers sit at `((j + 0.5) / W, (i + 0.5) / H)`.

mod adjacency;
mod grid;
mod resample;

pub use adjacency::{Edge, FaceAdjacency, Neighbor};
pub use grid::{CubemapGrid, ErpGrid, Filter, Raster};
pub use resample::{
    cubemap_to_erp, erp_to_cubemap, perspective_view, rotate_yaw90, ViewSpec,
};

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Angle between two vectors, stable for nearly parallel inputs.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// The six cube faces in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeFace {
    Front,
    Right,
    Back,
    Left,
    Up,
    Down,
}

/// Orthonormal frame of a face. `right x up = normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame {
    pub right: Vec3,
    pub up: Vec3,
    pub normal: Vec3,
}

impl FaceFrame {
    pub fn determinant(&self) -> f64 {
        self.right.cross(self.up).dot(self.normal)
    }
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Right,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Up,
        CubeFace::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CubeFace> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CubeFace::Front => "front",
            CubeFace::Right => "right",
            CubeFace::Back => "back",
            CubeFace::Left => "left",
            CubeFace::Up => "up",
            CubeFace::Down => "down",
        }
    }

    pub fn frame(self) -> FaceFrame {
        let (right, up, normal) = match self {
            CubeFace::Front => (Vec3::X, Vec3::Y, Vec3::Z),
            CubeFace::Right => (-Vec3::Z, Vec3::Y, Vec3::X),
            CubeFace::Back => (-Vec3::X, Vec3::Y, -Vec3::Z),
            CubeFace::Left => (Vec3::Z, Vec3::Y, -Vec3::X),
            CubeFace::Up => (Vec3::X, -Vec3::Z, Vec3::Y),
            CubeFace::Down => (Vec3::X, Vec3::Z, -Vec3::Y),
        };
        FaceFrame { right, up, normal }
    }

    /// Unnormalized ray through tangent-plane coordinates `(a, b)`, where
    /// `a = 2u - 1` and `b = 1 - 2v`. Valid for `|a|, |b| > 1` too, which is
    /// how halo pixels beyond the face edge are addressed.
    pub fn ray(self, a: f64, b: f64) -> Vec3 {
        let f = self.frame();
        f.right * a + f.up * b + f.normal
    }
}

/// Continuous coordinates on one face. Pixel centers lie at `(j + 0.5) / W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceUV {
    pub face: CubeFace,
    pub u: f64,
    pub v: f64,
}

impl FaceUV {
    pub fn new(face: CubeFace, u: f64, v: f64) -> Self {
        Self { face, u, v }
    }

    /// Center of pixel `(row, col)` on a face of `size` pixels.
    pub fn pixel_center(face: CubeFace, row: usize, col: usize, size: usize) -> Self {
        Self::new(face, uv_of_pixel(col as f64, size), uv_of_pixel(row as f64, size))
    }

    /// Tangent-plane coordinates `(2u - 1, 1 - 2v)`.
    pub fn tangent(self) -> (f64, f64) {
        (2.0 * self.u - 1.0, 1.0 - 2.0 * self.v)
    }

    /// Nearest pixel `(row, col)`, clamped to the face.
    pub fn nearest_pixel(self, size: usize) -> (usize, usize) {
        (nearest_index(self.v, size), nearest_index(self.u, size))
    }

    /// Continuous pixel coordinates `(x, y)` with pixel centers on integers.
    pub fn pixel_coords(self, size: usize) -> (f64, f64) {
        (self.u * size as f64 - 0.5, self.v * size as f64 - 0.5)
    }
}

/// Tangent-plane coordinates `(a, b)` of the center of pixel `(row, col)`,
/// computed as `(2 col + 1 - n) / n` and `(n - 1 - 2 row) / n` so mirrored
/// pixels get exactly mirrored coordinates.
pub fn pixel_tangent(row: usize, col: usize, size: usize) -> (f64, f64) {
    let n = size as f64;
    ((2.0 * col as f64 + 1.0 - n) / n, (n - 1.0 - 2.0 * row as f64) / n)
}

/// Unit viewing direction through the center of pixel `(row, col)`.
pub fn pixel_direction(face: CubeFace, row: usize, col: usize, size: usize) -> Vec3 {
    let (a, b) = pixel_tangent(row, col, size);
    face.ray(a, b) * (1.0 / (a * a + b * b + 1.0).sqrt())
}

/// `u` (or `v`) of a possibly fractional or out-of-face pixel index.
pub fn uv_of_pixel(index: f64, size: usize) -> f64 {
    (index + 0.5) / size as f64
}

pub(crate) fn nearest_index(u: f64, size: usize) -> usize {
    let x = (u * size as f64).floor();
    if x < 0.0 {
        0
    } else {
        (x as usize).min(size - 1)
    }
}

/// Unit direction from the cube center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection(pub Vec3);

impl SphericalDirection {
    pub fn new(v: Vec3) -> Self {
        Self(v.normalized())
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    /// Direction at longitude `lon` and latitude `lat` (radians). `Front`
    /// sits at `lon = 0`, `Right` at `lon = pi/2`.
    pub fn from_lon_lat(lon: f64, lat: f64) -> Self {
        let (sl, cl) = lon.sin_cos();
        let (sp, cp) = lat.sin_cos();
        Self(Vec3::new(cp * sl, sp, cp * cl))
    }

    pub fn lon_lat(self) -> (f64, f64) {
        let v = self.0;
        (v.x.atan2(v.z), v.y.clamp(-1.0, 1.0).asin())
    }
}

pub fn direction_of(p: FaceUV) -> SphericalDirection {
    let (a, b) = p.tangent();
    // Norm from the tangent coordinates, not the world components, so every
    // face rounds identically and symmetric pixels get symmetric directions.
    let inv = 1.0 / (a * a + b * b + 1.0).sqrt();
    SphericalDirection(p.face.ray(a, b) * inv)
}

pub fn face_of(d: SphericalDirection) -> FaceUV {
    face_of_vector(d.0)
}

/// Face selection for any nonzero vector; projection is scale invariant so
/// the input does not need unit norm. The largest absolute component picks
/// the face, ties resolve to the earlier face in storage order.
pub fn face_of_vector(v: Vec3) -> FaceUV {
    let candidates = [
        (if v.z >= 0.0 { CubeFace::Front } else { CubeFace::Back }, v.z.abs()),
        (if v.x >= 0.0 { CubeFace::Right } else { CubeFace::Left }, v.x.abs()),
        (if v.y >= 0.0 { CubeFace::Up } else { CubeFace::Down }, v.y.abs()),
    ];
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) {
            best = c;
        }
    }
    let face = best.0;
    let f = face.frame();
    let depth = v.dot(f.normal);
    let a = v.dot(f.right) / depth;
    let b = v.dot(f.up) / depth;
    FaceUV::new(face, (a + 1.0) * 0.5, (1.0 - b) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn frames_are_orthonormal_and_right_handed() {
        for face in CubeFace::ALL {
            let f = face.frame();
            assert_eq!(f.determinant(), 1.0, "{face:?}");
            assert_eq!(f.right.dot(f.up), 0.0);
            assert_eq!(f.right.dot(f.normal), 0.0);
            assert_eq!(f.up.dot(f.normal), 0.0);
        }
        assert_eq!(CubeFace::Front.frame().normal.dot(CubeFace::Back.frame().normal), -1.0);
        assert_eq!(CubeFace::Left.frame().normal.dot(CubeFace::Right.frame().normal), -1.0);
        assert_eq!(CubeFace::Up.frame().normal.dot(CubeFace::Down.frame().normal), -1.0);
    }

    #[test]
    fn face_centers_are_normals() {
        let d = direction_of(FaceUV::new(CubeFace::Front, 0.5, 0.5));
        assert_eq!(d.0, Vec3::Z);
        let d = direction_of(FaceUV::new(CubeFace::Right, 0.5, 0.5));
        assert_eq!(d.0, Vec3::X);
        for face in CubeFace::ALL {
            assert_eq!(direction_of(FaceUV::new(face, 0.5, 0.5)).0, face.frame().normal);
        }
    }

    #[test]
    fn front_right_seam_is_at_45_degrees() {
        let d = direction_of(FaceUV::new(CubeFace::Front, 1.0 - 1e-12, 0.5));
        let seam = Vec3::new(1.0, 0.0, 1.0).normalized();
        assert!(close(d.0, seam, 1e-11));
    }

    #[test]
    fn up_axis_lands_on_up_center() {
        let p = face_of(SphericalDirection(Vec3::Y));
        assert_eq!(p.face, CubeFace::Up);
        assert_eq!((p.u, p.v), (0.5, 0.5));
    }

    #[test]
    fn ties_break_by_face_order() {
        let p = face_of(SphericalDirection::new(Vec3::new(1.0, 0.0, 1.0)));
        assert_eq!(p.face, CubeFace::Front);
        assert_eq!(p.u, 1.0);
        assert_eq!(p.v, 0.5);
        // Up/Right tie resolves to Right.
        let p = face_of_vector(Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(p.face, CubeFace::Right);
        // Three-way corner resolves to Front.
        let p = face_of_vector(Vec3::new(-1.0, -1.0, 1.0));
        assert_eq!(p.face, CubeFace::Front);
        assert_eq!((p.u, p.v), (0.0, 1.0));
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() < 1e-3 {
                continue;
            }
            let d = SphericalDirection::new(v);
            let back = direction_of(face_of(d));
            worst = worst.max(d.0.angle_to(back.0));
        }
        assert!(worst < 1e-9, "worst angle {worst}");
    }

    #[test]
    fn uv_round_trip_in_open_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let face = CubeFace::from_index(rng.random_range(0..6)).unwrap();
            let p = FaceUV::new(face, rng.random_range(1e-6..1.0 - 1e-6), rng.random_range(1e-6..1.0 - 1e-6));
            let q = face_of(direction_of(p));
            assert_eq!(q.face, face);
            assert!((q.u - p.u).abs() < 1e-9 && (q.v - p.v).abs() < 1e-9);
        }
    }

    #[test]
    fn lon_lat_convention() {
        let d = SphericalDirection::from_lon_lat(0.0, 0.0);
        assert_eq!(d.0, Vec3::Z);
        let d = SphericalDirection::from_lon_lat(std::f64::consts::FRAC_PI_2, 0.0);
        assert!(close(d.0, Vec3::X, 1e-15));
        let (lon, lat) = SphericalDirection(Vec3::new(0.0, 1.0, 0.0)).lon_lat();
        assert_eq!(lat, std::f64::consts::FRAC_PI_2);
        assert_eq!(lon, 0.0);
    }
}
