//! Depth on cube faces: Z-depth vs Euclidean depth, and the affine rescaling
//! that maps the condition face's depth range onto `[-s, s]`.
//!
//! Z-depth is measured along the face normal. A pixel whose unnormalized ray
//! is `(a, b, 1)` in its face frame therefore has Euclidean depth
//! `z * sqrt(a^2 + b^2 + 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::geometry::{CubeFace, CubemapGrid, FaceUV};
use crate::numeric::Tensor;
use crate::sync::MultiPlaneTensor;

/// Rescale factor used at inference time.
pub const INFERENCE_RESCALE_S: f64 = 0.6;
/// Training draws the rescale factor uniformly from this range.
pub const TRAIN_RESCALE_RANGE: (f64, f64) = (0.2, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthConvention {
    ZDepth,
    Euclidean,
}

impl DepthConvention {
    pub fn name(self) -> &'static str {
        match self {
            DepthConvention::ZDepth => "z_depth",
            DepthConvention::Euclidean => "euclidean",
        }
    }
}

/// Single-channel cubemap of positive depths with its convention attached.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCubemap {
    grid: CubemapGrid,
    convention: DepthConvention,
}

impl DepthCubemap {
    pub fn new(grid: CubemapGrid, convention: DepthConvention) -> Result<Self> {
        if grid.channels() != 1 {
            return Err(shape_err(format!("depth cubemap needs 1 channel, got {}", grid.channels())));
        }
        Ok(Self { grid, convention })
    }

    pub fn grid(&self) -> &CubemapGrid {
        &self.grid
    }

    pub fn into_grid(self) -> CubemapGrid {
        self.grid
    }

    pub fn convention(&self) -> DepthConvention {
        self.convention
    }

    pub fn size(&self) -> usize {
        self.grid.size()
    }

    pub fn get(&self, face: CubeFace, i: usize, j: usize) -> f64 {
        self.grid.get(face, 0, i, j)
    }

    /// Fail unless every pixel is finite and strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        let count = self.grid.data().iter().filter(|v| !(v.is_finite() && **v > 0.0)).count();
        if count > 0 {
            return Err(Error::NonPositiveDepth { count });
        }
        Ok(())
    }

    pub fn require(&self, expected: DepthConvention, hint: &'static str) -> Result<()> {
        if self.convention != expected {
            return Err(Error::Convention {
                expected: expected.name(),
                actual: self.convention.name(),
                hint,
            });
        }
        Ok(())
    }
}

/// `sqrt(a^2 + b^2 + 1)` for the center of pixel `(i, j)`: Euclidean length
/// of the unnormalized face ray.
pub fn ray_length(i: usize, j: usize, n: usize) -> f64 {
    let (a, b) = FaceUV::pixel_center(CubeFace::Front, i, j, n).tangent();
    ray_length_at(a, b)
}

/// Ray length at tangent-plane coordinates `(a, b)`.
pub fn ray_length_at(a: f64, b: f64) -> f64 {
    (a * a + b * b + 1.0).sqrt()
}

fn convert(d: &DepthCubemap, to: DepthConvention, op: impl Fn(f64, f64) -> f64) -> Result<DepthCubemap> {
    d.check_positive()?;
    let n = d.size();
    let lengths: Vec<f64> = (0..n * n).map(|k| ray_length(k / n, k % n, n)).collect();
    let mut grid = d.grid.clone();
    for face in CubeFace::ALL {
        for (v, l) in grid.face_slice_mut(face).iter_mut().zip(&lengths) {
            *v = op(*v, *l);
        }
    }
    Ok(DepthCubemap { grid, convention: to })
}

pub fn euclidean_to_z(d: &DepthCubemap) -> Result<DepthCubemap> {
    d.require(DepthConvention::Euclidean, "")?;
    convert(d, DepthConvention::ZDepth, |e, l| e / l)
}

pub fn z_to_euclidean(d: &DepthCubemap) -> Result<DepthCubemap> {
    d.require(DepthConvention::ZDepth, "")?;
    convert(d, DepthConvention::Euclidean, |z, l| z * l)
}

/// How the condition face's depth range is measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeStatistic {
    #[default]
    MinMax,
    /// Percentiles in `[0, 100]`, nearest-rank.
    Percentile { low: f64, high: f64 },
}

/// Affine map sending `[d_min, d_max]` to `[-s, s]`. Values outside the
/// range map linearly beyond `±s`; nothing is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNormalization {
    pub d_min: f64,
    pub d_max: f64,
    pub s: f64,
}

impl DepthNormalization {
    pub fn new(d_min: f64, d_max: f64, s: f64) -> Result<Self> {
        if !(d_max > d_min) || !d_min.is_finite() || !d_max.is_finite() {
            return Err(invalid(format!("depth range [{d_min}, {d_max}] is empty")));
        }
        if !(s > 0.0 && s <= 1.0) {
            return Err(invalid(format!("rescale factor {s} outside (0, 1]")));
        }
        Ok(Self { d_min, d_max, s })
    }

    /// Range statistics taken from the condition face only.
    pub fn from_condition(d: &DepthCubemap, face: CubeFace, s: f64, stat: RangeStatistic) -> Result<Self> {
        let values = d.grid.face_slice(face);
        let (lo, hi) = match stat {
            RangeStatistic::MinMax => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
            RangeStatistic::Percentile { low, high } => {
                if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
                    return Err(invalid(format!("bad percentiles {low}, {high}")));
                }
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let rank = |p: f64| sorted[((p / 100.0) * (sorted.len() - 1) as f64).round() as usize];
                (rank(low), rank(high))
            }
        };
        Self::new(lo, hi, s)
    }

    #[inline]
    pub fn normalize(&self, d: f64) -> f64 {
        self.s * (2.0 * (d - self.d_min) / (self.d_max - self.d_min) - 1.0)
    }

    #[inline]
    pub fn denormalize(&self, x: f64) -> f64 {
        self.d_min + (x / self.s + 1.0) * 0.5 * (self.d_max - self.d_min)
    }
}

/// Normalized depth as a `[1, 6, 1, H, W]` tensor.
pub fn normalize_depth(d: &DepthCubemap, n: &DepthNormalization) -> Result<MultiPlaneTensor> {
    let size = d.size();
    let data = d.grid.data().iter().map(|&v| n.normalize(v)).collect();
    MultiPlaneTensor::new(Tensor::from_vec(&[1, 6, 1, size, size], data)?)
}

/// Inverse of [`normalize_depth`] for batch item `b`, channel 0. The result is
/// not checked for positivity: generated depths may leave the valid range.
pub fn denormalize_depth(
    x: &MultiPlaneTensor,
    b: usize,
    n: &DepthNormalization,
    convention: DepthConvention,
) -> Result<DepthCubemap> {
    let cube = x.to_cubemap(b).select_channels(&[0])?;
    DepthCubemap::new(cube.map(|v| n.denormalize(v)), convention)
}

/// Number of normalized values with magnitude above one.
pub fn count_beyond_unit(x: &[f64]) -> usize {
    x.iter().filter(|v| v.abs() > 1.0).count()
}

/// Training-time rescale factor, uniform on `[0.2, 1.0]`.
pub fn sample_rescale_s<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(TRAIN_RESCALE_RANGE.0..=TRAIN_RESCALE_RANGE.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn euclid(grid: CubemapGrid) -> DepthCubemap {
        DepthCubemap::new(grid, DepthConvention::Euclidean).unwrap()
    }

    #[test]
    fn face_center_and_corner() {
        // Odd size puts a pixel exactly on the face center.
        let d = euclid(CubemapGrid::from_direction_fn(5, 1, |_, o| o[0] = 2.0));
        let z = euclidean_to_z(&d).unwrap();
        assert_eq!(z.get(CubeFace::Front, 2, 2), 2.0);
        // At the exact face corner z = e / sqrt(3).
        assert_eq!(ray_length_at(1.0, 1.0), 3f64.sqrt());
        assert_eq!(ray_length_at(-1.0, 1.0), 3f64.sqrt());
        let (a, b) = (-0.8, 0.8);
        assert_eq!(ray_length(0, 0, 5), ray_length_at(a, b));
    }

    #[test]
    fn round_trip_recovers_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let grid = CubemapGrid::from_direction_fn(n, 1, |_, o| o[0] = rng.random_range(0.5..20.0));
        let e = euclid(grid);
        let z = euclidean_to_z(&e).unwrap();
        assert_eq!(z.convention(), DepthConvention::ZDepth);
        for face in CubeFace::ALL {
            for i in 0..n {
                for j in 0..n {
                    let p = FaceUV::pixel_center(face, i, j, n);
                    let (a, b) = p.tangent();
                    let point = face.ray(a, b) * z.get(face, i, j);
                    assert!((point.norm() - e.get(face, i, j)).abs() < 1e-10);
                    assert!(z.get(face, i, j) <= e.get(face, i, j));
                }
            }
        }
        let back = z_to_euclidean(&z).unwrap();
        for (x, y) in back.grid().data().iter().zip(e.grid().data()) {
            assert!((x - y).abs() <= 1e-12 * y);
        }
    }

    #[test]
    fn conventions_are_enforced() {
        let z = DepthCubemap::new(CubemapGrid::from_direction_fn(4, 1, |_, o| o[0] = 1.0), DepthConvention::ZDepth).unwrap();
        assert!(matches!(euclidean_to_z(&z), Err(Error::Convention { .. })));
        let e = euclid(CubemapGrid::from_direction_fn(4, 1, |_, o| o[0] = 1.0));
        assert!(matches!(z_to_euclidean(&e), Err(Error::Convention { .. })));
    }

    #[test]
    fn non_positive_pixels_are_counted() {
        let mut g = CubemapGrid::from_direction_fn(4, 1, |_, o| o[0] = 1.0);
        g.set(CubeFace::Up, 0, 1, 1, 0.0);
        g.set(CubeFace::Down, 0, 2, 3, -4.0);
        g.set(CubeFace::Left, 0, 0, 0, f64::NAN);
        match euclidean_to_z(&euclid(g)) {
            Err(Error::NonPositiveDepth { count }) => assert_eq!(count, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fronto_parallel_wall_has_constant_z() {
        // Plane z = 3 seen through the Front face.
        let n = 32;
        let e = euclid(CubemapGrid::from_direction_fn(n, 1, |d, o| o[0] = 3.0 / d.z.abs().max(1e-3)));
        let z = euclidean_to_z(&e).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(var(z.grid().face_slice(CubeFace::Front)) < 1e-18);
        assert!(var(e.grid().face_slice(CubeFace::Front)) > 0.0);
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let n = DepthNormalization::new(1.0, 5.0, INFERENCE_RESCALE_S).unwrap();
        assert_eq!(n.normalize(1.0), -0.6);
        assert_eq!(n.normalize(5.0), 0.6);
        assert_eq!(n.normalize(3.0), 0.0);
        // Beyond the condition range: linear, unclamped.
        assert!((n.normalize(7.0) - 1.2).abs() < 1e-15);
        assert!((n.denormalize(n.normalize(4.2)) - 4.2).abs() < 1e-14);
        assert!(DepthNormalization::new(2.0, 2.0, 0.6).is_err());
        assert!(DepthNormalization::new(3.0, 2.0, 0.6).is_err());
    }

    #[test]
    fn statistics_come_from_the_condition_face() {
        let mut g = CubemapGrid::from_direction_fn(4, 1, |_, o| o[0] = 10.0);
        for (k, v) in g.face_slice_mut(CubeFace::Front).iter_mut().enumerate() {
            *v = 1.0 + k as f64;
        }
        let d = DepthCubemap::new(g, DepthConvention::ZDepth).unwrap();
        let n = DepthNormalization::from_condition(&d, CubeFace::Front, 0.5, RangeStatistic::MinMax).unwrap();
        assert_eq!((n.d_min, n.d_max), (1.0, 16.0));
        let t = normalize_depth(&d, &n).unwrap();
        assert_eq!(count_beyond_unit(t.data()), 0);
        let p = DepthNormalization::from_condition(&d, CubeFace::Front, 0.5, RangeStatistic::Percentile { low: 0.0, high: 100.0 }).unwrap();
        assert_eq!(p, n);
        let back = denormalize_depth(&t, 0, &n, DepthConvention::ZDepth).unwrap();
        for (x, y) in back.grid().data().iter().zip(d.grid().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_factor_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..100_000).map(|_| sample_rescale_s(&mut rng)).collect();
        assert!(samples.iter().all(|s| (0.2..=1.0).contains(s)));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((mean - 0.6).abs() < 0.01, "{mean}");
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_monotone(a in 0.1f64..100.0, b in 0.1f64..100.0, s in 0.2f64..=1.0) {
            let n = DepthNormalization::new(1.0, 9.0, s).unwrap();
            if a < b {
                proptest::prop_assert!(n.normalize(a) < n.normalize(b));
            }
        }
    }
}
