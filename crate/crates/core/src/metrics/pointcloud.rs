//! Point-cloud metrics and samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::decoders::TriMesh;
use crate::defaults::{EVAL_POINTS, EVAL_VIEWS, FPS_POINTS, FSCORE_RADIUS};
use crate::error::{Result, SlatError};
use crate::multiview::{sample_sphere_cameras, unproject_depth, EVAL_CAMERA_RADIUS, EVAL_FOV_DEG};
use crate::render::rasterize_mesh;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn non_empty(x: &[[f64; 3]], name: &str) -> Result<()> {
    if x.is_empty() {
        return Err(SlatError::Empty(format!("point cloud {name} is empty")));
    }
    Ok(())
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn nn_distances(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.par_iter().map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d)| d.sqrt())).collect()
}

/// Two-sided mean nearest-neighbour distance (plain, not squared, L2).
pub fn chamfer(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<f64> {
    non_empty(x, "X")?;
    non_empty(y, "Y")?;
    let dx = nn_distances(x, y);
    let dy = nn_distances(y, x);
    Ok(dx.iter().sum::<f64>() / x.len() as f64 + dy.iter().sum::<f64>() / y.len() as f64)
}

/// F-score from the counts `FN = #{x : d(x, Y) > r}`, `FP = #{y : d(y, X) > r}`,
/// `TP = |Y| - FP`; precision `TP / (TP + FP)`, recall `TP / (TP + FN)`.
pub fn fscore(x: &[[f64; 3]], y: &[[f64; 3]], r: f64) -> Result<f64> {
    non_empty(x, "X")?;
    non_empty(y, "Y")?;
    let fn_ = nn_distances(x, y).iter().filter(|&&d| d > r).count() as f64;
    let fp = nn_distances(y, x).iter().filter(|&&d| d > r).count() as f64;
    let tp = y.len() as f64 - fp;
    Ok(fscore_from_counts(tp, fp, fn_))
}

pub fn fscore_from_counts(tp: f64, fp: f64, fn_: f64) -> f64 {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) }
}

pub fn fscore_default(x: &[[f64; 3]], y: &[[f64; 3]]) -> Result<f64> {
    fscore(x, y, FSCORE_RADIUS)
}

/// Greedy farthest-point order starting at `start`; returns indices and the
/// min-distance of each chosen point at the time it was picked (infinite
/// for the start). Ties go to the lowest index.
pub fn farthest_point_order(points: &[[f64; 3]], k: usize, start: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > points.len() {
        return Err(SlatError::OutOfRange(format!("cannot pick {k} of {} points", points.len())));
    }
    if start >= points.len() {
        return Err(SlatError::OutOfRange(format!("start index {start} of {}", points.len())));
    }
    let d2 = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut order = vec![start];
    let mut picked_d = vec![f64::INFINITY];
    let mut last = start;
    while order.len() < k {
        let mut best = (usize::MAX, -1.0);
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(d2(p, &points[last]));
            if min_d[i] > best.1 {
                best = (i, min_d[i]);
            }
        }
        last = best.0;
        order.push(last);
        picked_d.push(best.1.sqrt());
    }
    Ok((order, picked_d))
}

/// Farthest-point sample of `k` points from a seeded random start.
pub fn farthest_point_sample(points: &[[f64; 3]], k: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if points.is_empty() {
        return Err(SlatError::Empty("no points to sample".into()));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..points.len());
    let (order, _) = farthest_point_order(points, k, start)?;
    Ok(order.into_iter().map(|i| points[i]).collect())
}

pub fn fps_default(points: &[[f64; 3]], seed: u64) -> Result<Vec<[f64; 3]>> {
    farthest_point_sample(points, FPS_POINTS, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub cloud: PointCloud,
    /// Fewer visible points than requested; all were returned.
    pub short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceSampling {
    pub views: usize,
    pub points: usize,
    /// Square depth-map resolution per view.
    pub image_size: u32,
}

impl Default for SurfaceSampling {
    fn default() -> Self {
        Self { views: EVAL_VIEWS, points: EVAL_POINTS, image_size: 256 }
    }
}

/// Renders depth from sphere cameras, back-projects every hit pixel, and
/// keeps a uniform random subset.
pub fn surface_point_cloud(mesh: &TriMesh, cfg: &SurfaceSampling, seed: u64) -> Result<SurfaceSample> {
    let cams = sample_sphere_cameras(cfg.views, EVAL_CAMERA_RADIUS, EVAL_FOV_DEG, cfg.image_size, cfg.image_size, seed)?;
    let mut all = Vec::new();
    for cam in &cams {
        let img = rasterize_mesh(mesh, cam, [0.0; 3])?;
        all.extend(unproject_depth(img.depth.as_ref().expect("rasterizer emits depth"), cam)?);
    }
    if all.is_empty() {
        return Err(SlatError::Empty("mesh is not visible from any view".into()));
    }
    if all.len() <= cfg.points {
        let short = all.len() < cfg.points;
        return Ok(SurfaceSample { cloud: PointCloud::new(all), short });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut idx = rand::seq::index::sample(&mut rng, all.len(), cfg.points).into_vec();
    idx.sort_unstable();
    Ok(SurfaceSample { cloud: PointCloud::new(idx.into_iter().map(|i| all[i]).collect()), short: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_single_points() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        let x = [[0.1, 0.2, 0.3], [0.0, -0.4, 0.2]];
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert!(chamfer(&[], &x).is_err());
    }

    #[test]
    fn fscore_extremes() {
        let x = [[0.1, 0.2, 0.3], [0.0, -0.4, 0.2]];
        assert_eq!(fscore(&x, &x, 0.05).unwrap(), 1.0);
        assert_eq!(fscore(&x, &[[5.0, 5.0, 5.0]], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn fps_line_trace() {
        let pts: Vec<[f64; 3]> = (0..=10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let (order, d) = farthest_point_order(&pts, 3, 0).unwrap();
        assert_eq!(order, vec![0, 10, 5]);
        assert_eq!(&d[1..], &[10.0, 5.0]);
        let (all, _) = farthest_point_order(&pts, 11, 3).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..=10).collect::<Vec<_>>());
        assert!(farthest_point_order(&pts, 12, 0).is_err());
    }

    #[test]
    fn sphere_surface_samples() {
        let mesh = TriMesh::icosphere([0.0; 3], 0.4, 3);
        let cfg = SurfaceSampling { views: 6, points: 2000, image_size: 48 };
        let s = surface_point_cloud(&mesh, &cfg, 1).unwrap();
        assert_eq!(s.cloud.len(), 2000);
        assert!(!s.short);
        // Flat facets sit slightly inside the circumscribed sphere.
        for p in &s.cloud.points {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(r <= 0.4 + 1e-9 && r > 0.38, "{r}");
        }
        let big = SurfaceSampling { points: 10_000_000, ..cfg };
        assert!(surface_point_cloud(&mesh, &big, 1).unwrap().short);
    }
}
