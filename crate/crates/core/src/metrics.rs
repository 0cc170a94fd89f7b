//! Depth accuracy metrics, the cross-seam discontinuity measure, and
//! perspective-view evaluation of generated RGB-D panoramas.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{z_to_euclidean, DepthConvention, DepthCubemap};
use crate::error::{invalid, shape_err, Error, Result};
use crate::geometry::{perspective_view, CubeFace, CubemapGrid, Edge, FaceAdjacency, Filter, Raster, ViewSpec};
use crate::sync::MultiPlaneTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    /// Scale predictions by `median(ref) / median(pred)` first.
    #[default]
    MedianScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub delta_125: f64,
    pub abs_rel: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Pixels that entered the averages.
    pub evaluated: usize,
    /// Pixels skipped because the reference was not positive.
    pub excluded: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub fn depth_metrics(pred: &[f64], reference: &[f64], align: Alignment) -> Result<DepthMetrics> {
    if pred.len() != reference.len() {
        return Err(shape_err(format!("{} predictions vs {} references", pred.len(), reference.len())));
    }
    let keep: Vec<usize> = (0..reference.len()).filter(|&i| reference[i] > 0.0).collect();
    let excluded = reference.len() - keep.len();
    if keep.is_empty() {
        return Err(invalid("no pixel has a positive reference depth"));
    }
    let scale = match align {
        Alignment::None => 1.0,
        Alignment::MedianScale => {
            let mut p: Vec<f64> = keep.iter().map(|&i| pred[i]).collect();
            let mut r: Vec<f64> = keep.iter().map(|&i| reference[i]).collect();
            let mp = median(&mut p);
            if !(mp > 0.0) {
                return Err(invalid(format!("median prediction {mp} cannot be scale-aligned")));
            }
            median(&mut r) / mp
        }
    };
    let (mut hits, mut rel, mut sq, mut abs) = (0usize, 0.0, 0.0, 0.0);
    for &i in &keep {
        let (p, r) = (pred[i] * scale, reference[i]);
        if (p / r).max(r / p) < 1.25 {
            hits += 1;
        }
        let e = (p - r).abs();
        rel += e / r;
        sq += e * e;
        abs += e;
    }
    let n = keep.len() as f64;
    Ok(DepthMetrics {
        delta_125: hits as f64 / n,
        abs_rel: rel / n,
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        evaluated: keep.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSeam {
    pub face: CubeFace,
    pub edge: Edge,
    pub neighbor: CubeFace,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    /// The 12 cube edges.
    pub edges: Vec<EdgeSeam>,
    pub max: f64,
    pub mean: f64,
    /// Mean absolute first difference between neighbors inside faces.
    pub interior_mean: f64,
    /// `mean / interior_mean`; `None` when the interior is constant.
    pub ratio: Option<f64>,
    /// Second differences at the two pixels flanking each seam, averaged.
    /// Zero for any profile that is linear through the seam, so padding
    /// artifacts show up here even when they leave the jump itself small.
    pub kink_max: f64,
    pub kink_mean: f64,
}

/// The pixel one step inward from boundary pixel `(r, c)` of `edge`.
fn inward(edge: Edge, (r, c): (usize, usize)) -> (usize, usize) {
    match edge {
        Edge::Top => (r + 1, c),
        Edge::Right => (r, c - 1),
        Edge::Bottom => (r - 1, c),
        Edge::Left => (r, c + 1),
    }
}

/// Absolute differences between every boundary pixel and its neighbor
/// across the seam, over all batch items and channels.
pub fn seam_discontinuity(x: &MultiPlaneTensor) -> SeamReport {
    let (bsz, ch, n) = (x.batch(), x.channels(), x.size());
    let at = |b: usize, f: CubeFace, c: usize, i: usize, j: usize| x.get(b, f, c, i, j);
    let mut edges = Vec::with_capacity(12);
    let (mut gmax, mut gsum, mut gcount) = (0.0f64, 0.0, 0usize);
    let (mut kmax, mut ksum) = (0.0f64, 0.0);
    for (face, edge, nbr) in FaceAdjacency::undirected_edges() {
        let (mut emax, mut esum, mut ecount) = (0.0f64, 0.0, 0usize);
        for b in 0..bsz {
            for c in 0..ch {
                for t in 0..n {
                    let (r, col) = edge.pixel(t, n);
                    let (nf, nr, nc) = FaceAdjacency::across(face, edge, t, n);
                    let (a0, b0) = (at(b, face, c, r, col), at(b, nf, c, nr, nc));
                    let d = (a0 - b0).abs();
                    if n >= 2 {
                        let (ar, ac) = inward(edge, (r, col));
                        let (br, bc) = inward(nbr.edge, (nr, nc));
                        let (a1, b1) = (at(b, face, c, ar, ac), at(b, nf, c, br, bc));
                        let step = b0 - a0;
                        let k = 0.5 * ((step - (a0 - a1)).abs() + ((b1 - b0) - step).abs());
                        kmax = kmax.max(k);
                        ksum += k;
                    }
                    emax = emax.max(d);
                    esum += d;
                    ecount += 1;
                }
            }
        }
        gmax = gmax.max(emax);
        gsum += esum;
        gcount += ecount;
        edges.push(EdgeSeam {
            face,
            edge,
            neighbor: nbr.face,
            max: emax,
            mean: esum / ecount.max(1) as f64,
        });
    }
    let (mut isum, mut icount) = (0.0, 0usize);
    for b in 0..bsz {
        for face in CubeFace::ALL {
            for c in 0..ch {
                for i in 0..n {
                    for j in 0..n {
                        if j + 1 < n {
                            isum += (at(b, face, c, i, j) - at(b, face, c, i, j + 1)).abs();
                            icount += 1;
                        }
                        if i + 1 < n {
                            isum += (at(b, face, c, i, j) - at(b, face, c, i + 1, j)).abs();
                            icount += 1;
                        }
                    }
                }
            }
        }
    }
    let mean = gsum / gcount.max(1) as f64;
    let interior_mean = isum / icount.max(1) as f64;
    SeamReport {
        edges,
        max: gmax,
        mean,
        interior_mean,
        ratio: (interior_mean > 0.0).then(|| mean / interior_mean),
        kink_max: kmax,
        kink_mean: ksum / gcount.max(1) as f64,
    }
}

pub fn seam_discontinuity_cubemap(cube: &CubemapGrid) -> Result<SeamReport> {
    Ok(seam_discontinuity(&MultiPlaneTensor::from_cubemaps(std::slice::from_ref(cube))?))
}

/// Source of reference depths for perspective views.
pub trait RefDepthProvider: Sync {
    /// View Z-depth raster for view `index`.
    fn reference(&self, index: usize, view: &ViewSpec) -> Result<Raster>;
}

/// Z-depth of a perspective view, measured along the view axis, from a
/// panorama depth map.
pub fn project_depth(depth: &DepthCubemap, view: ViewSpec) -> Result<Raster> {
    let euclid = match depth.convention() {
        DepthConvention::Euclidean => depth.clone(),
        DepthConvention::ZDepth => z_to_euclidean(depth)?,
    };
    let mut r = perspective_view(euclid.grid(), view, Filter::Bilinear)?;
    let n = view.size;
    for i in 0..n {
        for j in 0..n {
            // The view ray has unit forward component.
            let len = view.ray(i, j).norm();
            r.set(0, i, j, r.get(0, i, j) / len);
        }
    }
    Ok(r)
}

/// References rendered from a known depth panorama; with the evaluated
/// panorama itself this yields perfect scores.
pub struct ProjectedReference {
    pub depth: DepthCubemap,
}

impl RefDepthProvider for ProjectedReference {
    fn reference(&self, _index: usize, view: &ViewSpec) -> Result<Raster> {
        project_depth(&self.depth, *view)
    }
}

/// References stored as `ref_000.png`, `ref_001.png`, ... (16-bit depth with
/// a JSON sidecar) in one directory.
pub struct FileReference {
    paths: Vec<PathBuf>,
}

impl FileReference {
    pub fn file_name(index: usize) -> String {
        format!("ref_{index:03}.png")
    }

    /// Fails listing every missing image or sidecar.
    pub fn open(dir: &Path, views: usize) -> Result<Self> {
        let paths: Vec<PathBuf> = (0..views).map(|i| dir.join(Self::file_name(i))).collect();
        let missing: Vec<PathBuf> = paths
            .iter()
            .flat_map(|p| [p.clone(), p.with_extension("json")])
            .filter(|p| !p.exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(Self { paths })
    }
}

impl RefDepthProvider for FileReference {
    fn reference(&self, index: usize, view: &ViewSpec) -> Result<Raster> {
        let path = self.paths.get(index).ok_or_else(|| invalid(format!("no reference for view {index}")))?;
        let r = crate::io::load_depth_raster_png16(path)?.raster;
        if r.height != view.size || r.width != view.size {
            return Err(shape_err(format!("{} is {}x{}, view is {}", path.display(), r.height, r.width, view.size)));
        }
        Ok(r)
    }
}

/// Viewpoints for evaluation: yaw uniform on the circle, pitch uniform in
/// `[-pi/4, pi/4]`, 90 degree field of view.
pub fn sample_views(n_views: usize, size: usize, seed: u64) -> Vec<ViewSpec> {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_views)
        .map(|_| ViewSpec {
            yaw: rng.random_range(-PI..PI),
            pitch: rng.random_range(-FRAC_PI_4..=FRAC_PI_4),
            fov: FRAC_PI_2,
            size,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaEvaluation {
    pub mean: DepthMetrics,
    pub views: Vec<ViewSpec>,
    pub per_view: Vec<DepthMetrics>,
}

/// Project the panorama's depth into random views, compare each with the
/// provider's reference after median scaling, and average.
pub fn evaluate_rgbd_panorama(
    depth: &DepthCubemap,
    provider: &dyn RefDepthProvider,
    n_views: usize,
    view_size: usize,
    seed: u64,
) -> Result<PanoramaEvaluation> {
    if n_views == 0 {
        return Err(invalid("need at least one view"));
    }
    let views = sample_views(n_views, view_size, seed);
    let per_view = views
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let pred = project_depth(depth, *v)?;
            let reference = provider.reference(i, v)?;
            depth_metrics(&pred.data, &reference.data, Alignment::MedianScale)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = per_view.len() as f64;
    let avg = |f: fn(&DepthMetrics) -> f64| per_view.iter().map(f).sum::<f64>() / k;
    let mean = DepthMetrics {
        delta_125: avg(|m| m.delta_125),
        abs_rel: avg(|m| m.abs_rel),
        rmse: avg(|m| m.rmse),
        mae: avg(|m| m.mae),
        evaluated: per_view.iter().map(|m| m.evaluated).sum(),
        excluded: per_view.iter().map(|m| m.excluded).sum(),
    };
    Ok(PanoramaEvaluation { mean, views, per_view })
}
