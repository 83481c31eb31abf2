use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Camera;
use crate::error::{Result, SlatError};
use crate::numeric::exact_sum;
use crate::sparse::{SparseGrid, VoxelCoord};
use crate::tensor::DenseTensor;

/// Center of voxel `p` in the `(-0.5, 0.5)^3` object frame.
pub fn voxel_center(p: VoxelCoord, resolution: u32) -> [f64; 3] {
    let n = resolution as f64;
    p.as_array().map(|v| (v as f64 + 0.5) / n - 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

/// A camera paired with an `H x W x D` feature map.
#[derive(Debug, Clone)]
pub struct FeatureView {
    pub camera: Camera,
    pub map: DenseTensor,
}

impl FeatureView {
    pub fn new(camera: Camera, map: DenseTensor) -> Result<Self> {
        camera.validate()?;
        let [h, w, _] = map.dims[..] else {
            return Err(SlatError::Shape(format!("feature map must be HxWxD, got {:?}", map.dims)));
        };
        if h != camera.height as usize || w != camera.width as usize {
            return Err(SlatError::Shape(format!(
                "feature map {h}x{w} does not match camera {}x{}",
                camera.height, camera.width
            )));
        }
        if map.data.iter().any(|v| !v.is_finite()) {
            return Err(SlatError::NonFinite("feature map".into()));
        }
        Ok(Self { camera, map })
    }

    pub fn channels(&self) -> usize {
        self.map.dims[2]
    }

    fn texel(&self, col: usize, row: usize) -> &[f64] {
        let d = self.channels();
        let start = (row * self.camera.width as usize + col) * d;
        &self.map.data[start..start + d]
    }

    /// Samples the map at continuous pixel coordinates (texel centers at `i + 0.5`).
    pub fn sample(&self, u: f64, v: f64, interp: Interpolation) -> Vec<f64> {
        let (w, h) = (self.camera.width as usize, self.camera.height as usize);
        match interp {
            Interpolation::Nearest => {
                let col = (u.floor() as usize).min(w - 1);
                let row = (v.floor() as usize).min(h - 1);
                self.texel(col, row).to_vec()
            }
            Interpolation::Bilinear => {
                let fx = (u - 0.5).clamp(0.0, (w - 1) as f64);
                let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
                let (a, b, c, d) =
                    (self.texel(x0, y0), self.texel(x1, y0), self.texel(x0, y1), self.texel(x1, y1));
                (0..self.channels())
                    .map(|k| {
                        (1.0 - ty) * ((1.0 - tx) * a[k] + tx * b[k]) + ty * ((1.0 - tx) * c[k] + tx * d[k])
                    })
                    .collect()
            }
        }
    }
}

/// Aggregated voxel features plus the voxels no view could see.
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub grid: SparseGrid,
    /// `unseen[i]` is set when voxel `i` projected outside every view; its
    /// features are zero.
    pub unseen: Vec<bool>,
}

impl Aggregated {
    pub fn unseen_count(&self) -> usize {
        self.unseen.iter().filter(|&&u| u).count()
    }
}

/// Projects every active voxel center into each view and averages the
/// sampled features over the views where it is visible.
///
/// Sums are correctly rounded, so the result does not depend on the order
/// of `views`.
pub fn aggregate_features(
    structure: &SparseGrid,
    views: &[FeatureView],
    interp: Interpolation,
) -> Result<Aggregated> {
    let first = views.first().ok_or_else(|| SlatError::Empty("no feature views".into()))?;
    let d = first.channels();
    if let Some(v) = views.iter().find(|v| v.channels() != d) {
        return Err(SlatError::Shape(format!("views disagree on channels: {d} vs {}", v.channels())));
    }
    let frames: Vec<_> = views.iter().map(|v| v.camera.frame()).collect();
    let res = structure.resolution();
    let rows: Vec<(Vec<f64>, bool)> = structure
        .coords()
        .par_iter()
        .map(|&p| {
            let center = super::Vec3::from(voxel_center(p, res));
            let samples: Vec<Vec<f64>> = views
                .iter()
                .zip(&frames)
                .filter_map(|(view, frame)| {
                    let proj = frame.project(&center, view.camera.width, view.camera.height);
                    proj.visible.then(|| view.sample(proj.u, proj.v, interp))
                })
                .collect();
            if samples.is_empty() {
                return (vec![0.0; d], true);
            }
            let n = samples.len() as f64;
            let mean = (0..d).map(|k| exact_sum(samples.iter().map(|s| s[k])) / n).collect();
            (mean, false)
        })
        .collect();
    let mut features = Vec::with_capacity(structure.len() * d);
    let mut unseen = Vec::with_capacity(structure.len());
    for (row, flag) in rows {
        features.extend(row);
        unseen.push(flag);
    }
    Ok(Aggregated { grid: structure.with_features(d, features)?, unseen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiview::sample_sphere_cameras;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn voxel_centers() {
        assert_eq!(voxel_center(VoxelCoord::new(0, 0, 0), 64), [-0.4921875; 3]);
        assert_eq!(voxel_center(VoxelCoord::new(31, 31, 31), 64), [-0.0078125; 3]);
        assert_eq!(voxel_center(VoxelCoord::new(32, 32, 32), 64), [0.0078125; 3]);
        for i in [0, 63] {
            let c = voxel_center(VoxelCoord::new(i, i, i), 64);
            assert!(c.iter().all(|v| v.abs() < 0.5));
        }
    }

    fn constant_view(cam: Camera, value: &[f64]) -> FeatureView {
        let n = cam.pixel_count();
        let data = (0..n).flat_map(|_| value.iter().copied()).collect();
        let map = DenseTensor::new(vec![cam.height as usize, cam.width as usize, value.len()], data).unwrap();
        FeatureView::new(cam, map).unwrap()
    }

    fn block(res: u32) -> SparseGrid {
        let coords = (0..(res * res * res) as usize).map(|i| VoxelCoord::from_linear(i, res)).collect();
        SparseGrid::new(res, 0, coords, vec![]).unwrap()
    }

    #[test]
    fn constant_maps_average() {
        let g = block(4);
        let a = constant_view(Camera::new([0.0, 0.0, 2.0], 40.0, 16, 16).unwrap(), &[1.0, 2.0]);
        let b = constant_view(Camera::new([2.0, 0.0, 0.0], 40.0, 16, 16).unwrap(), &[3.0, -2.0]);
        let one = aggregate_features(&g, std::slice::from_ref(&a), Interpolation::Bilinear).unwrap();
        assert_eq!(one.unseen_count(), 0);
        assert!(one.grid.features().chunks(2).all(|r| r == [1.0, 2.0]));
        let two = aggregate_features(&g, &[a, b], Interpolation::Nearest).unwrap();
        assert!(two.grid.features().chunks(2).all(|r| r == [2.0, 0.0]));
    }

    #[test]
    fn unseen_voxels_are_flagged() {
        let g = block(4);
        let narrow = constant_view(Camera::new([0.0, 0.0, 2.0], 2.0, 8, 8).unwrap(), &[5.0]);
        let out = aggregate_features(&g, &[narrow], Interpolation::Bilinear).unwrap();
        assert!(out.unseen_count() > 0);
        for (i, &u) in out.unseen.iter().enumerate() {
            if u {
                assert_eq!(out.grid.feature(i), &[0.0]);
            }
        }
        assert!(matches!(aggregate_features(&g, &[], Interpolation::Nearest), Err(SlatError::Empty(_))));
    }

    fn random_view(rng: &mut ChaCha8Rng, cam: Camera, d: usize) -> FeatureView {
        let n = cam.pixel_count() * d;
        let map = DenseTensor::new(
            vec![cam.height as usize, cam.width as usize, d],
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        FeatureView::new(cam, map).unwrap()
    }

    /// Per-voxel loop oracle with its own look-at projection.
    #[test]
    fn nearest_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cams = sample_sphere_cameras(5, 2.0, 40.0, 24, 20, 3).unwrap();
        let views: Vec<_> = cams.into_iter().map(|c| random_view(&mut rng, c, 3)).collect();
        let g = block(6);
        let got = aggregate_features(&g, &views, Interpolation::Nearest).unwrap();
        for (i, &p) in g.coords().iter().enumerate() {
            let c = voxel_center(p, 6);
            let mut sum = [0.0; 3];
            let mut count = 0;
            for v in &views {
                let cam = &v.camera;
                let e = cam.position;
                let f = normalize(sub(cam.target, e));
                let r = normalize(cross(f, cam.up));
                let u = cross(r, f);
                let d = sub(c, e);
                let (xc, yc, zc) = (dot(d, r), dot(d, u), dot(d, f));
                let fy = cam.height as f64 / 2.0 / (cam.fov_y_deg.to_radians() / 2.0).tan();
                let px = cam.width as f64 / 2.0 + fy * xc / zc;
                let py = cam.height as f64 / 2.0 - fy * yc / zc;
                if zc > 0.0 && px >= 0.0 && py >= 0.0 && px < cam.width as f64 && py < cam.height as f64 {
                    let idx = ((py as usize) * cam.width as usize + px as usize) * 3;
                    for k in 0..3 {
                        sum[k] += v.map.data[idx + k];
                    }
                    count += 1;
                }
            }
            for k in 0..3 {
                let want = if count == 0 { 0.0 } else { sum[k] / count as f64 };
                assert!((got.grid.feature(i)[k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_invariant_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cams = sample_sphere_cameras(4, 2.0, 40.0, 16, 16, 1).unwrap();
        let views: Vec<_> = cams.into_iter().map(|c| random_view(&mut rng, c, 2)).collect();
        let g = block(5);
        let a = aggregate_features(&g, &views, Interpolation::Bilinear).unwrap();
        let rev: Vec<_> = views.iter().rev().cloned().collect();
        assert_eq!(a.grid, aggregate_features(&g, &rev, Interpolation::Bilinear).unwrap().grid);

        let scaled: Vec<_> = views
            .iter()
            .map(|v| FeatureView {
                camera: v.camera.clone(),
                map: DenseTensor::new(v.map.dims.clone(), v.map.data.iter().map(|x| 2.0 * x).collect()).unwrap(),
            })
            .collect();
        let b = aggregate_features(&g, &scaled, Interpolation::Bilinear).unwrap();
        for (x, y) in a.grid.features().iter().zip(b.grid.features()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }
    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    }
    fn normalize(a: [f64; 3]) -> [f64; 3] {
        let n = dot(a, a).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    }
}
