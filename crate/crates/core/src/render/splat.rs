//! Depth-sorted Gaussian splatting.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion};
use rayon::prelude::*;

use super::image::RenderedImage;
use crate::decoders::{Gaussian, GaussianSet};
use crate::defaults::SCREEN_FILTER_VARIANCE;
use crate::multiview::{Camera, CameraFrame, Vec3};

pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Gaussians closer to the camera plane than this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenGaussian {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    /// Inverse of the filtered 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

pub fn covariance_3d(g: &Gaussian) -> Matrix3<f64> {
    let [w, x, y, z] = g.rotation;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vec3::from(g.scale));
    let m = r * s;
    m * m.transpose()
}

/// Screen-space covariance under the local affine approximation of the
/// projection, plus the screen filter on the diagonal.
pub fn project_gaussian(g: &Gaussian, index: usize, frame: &CameraFrame) -> Option<ScreenGaussian> {
    let t = frame.to_camera(&Vec3::from(g.center));
    if t.z <= NEAR_PLANE {
        return None;
    }
    let f = frame.focal;
    // Image v grows downward, opposite to camera y.
    let j = Matrix2x3::new(f / t.z, 0.0, -f * t.x / (t.z * t.z), 0.0, -f / t.z, f * t.y / (t.z * t.z));
    let w = Matrix3::from_rows(&[frame.right.transpose(), frame.up.transpose(), frame.forward.transpose()]);
    let jw = j * w;
    let cov = jw * covariance_3d(g) * jw.transpose() + Matrix2::identity() * SCREEN_FILTER_VARIANCE;
    let inv = cov.try_inverse()?;
    Some(ScreenGaussian {
        index,
        depth: t.z,
        mean: [frame.cx + f * t.x / t.z, frame.cy - f * t.y / t.z],
        conic: [inv[(0, 0)], inv[(0, 1)], inv[(1, 1)]],
        opacity: g.opacity,
        color: g.color,
    })
}

impl ScreenGaussian {
    /// Opacity at image point `(x, y)`, clamped to 0.99 and zeroed below 1/255.
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.mean[0], y - self.mean[1]);
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let alpha = (self.opacity * power.exp()).min(ALPHA_MAX);
        if alpha < ALPHA_MIN { 0.0 } else { alpha }
    }

    /// Pixel box outside which `alpha_at` is always zero.
    fn pixel_bounds(&self, width: u32, height: u32) -> Option<[u32; 4]> {
        if self.opacity * 255.0 <= 1.0 {
            return None;
        }
        let [a, b, c] = self.conic;
        let det = a * c - b * b;
        // Extent of the ellipse power = -ln(255 opacity) along each axis.
        let k = 2.0 * (self.opacity * 255.0).ln();
        let (rx, ry) = ((k * c / det).sqrt(), (k * a / det).sqrt());
        let lo_x = (self.mean[0] - rx - 0.5).floor().max(0.0);
        let hi_x = (self.mean[0] + rx - 0.5).ceil().min(width as f64 - 1.0);
        let lo_y = (self.mean[1] - ry - 0.5).floor().max(0.0);
        let hi_y = (self.mean[1] + ry - 0.5).ceil().min(height as f64 - 1.0);
        if !(lo_x <= hi_x && lo_y <= hi_y) {
            return None;
        }
        Some([lo_x as u32, hi_x as u32, lo_y as u32, hi_y as u32])
    }
}

/// Front-to-back compositing of already sorted Gaussians at one point.
/// Returns `(rgb without background, transmittance)`.
pub fn composite(sorted: &[&ScreenGaussian], x: f64, y: f64) -> ([f64; 3], f64) {
    let mut c = [0.0; 3];
    let mut t = 1.0;
    for g in sorted {
        let a = g.alpha_at(x, y);
        if a == 0.0 {
            continue;
        }
        for k in 0..3 {
            c[k] += t * a * g.color[k];
        }
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (c, t)
}

/// Projected Gaussians sorted by view depth, ties by list index.
pub fn sort_projected(set: &GaussianSet, frame: &CameraFrame) -> Vec<ScreenGaussian> {
    let mut out: Vec<ScreenGaussian> =
        set.gaussians.iter().enumerate().filter_map(|(i, g)| project_gaussian(g, i, frame)).collect();
    out.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));
    out
}

pub fn splat_gaussians(set: &GaussianSet, camera: &Camera, bg: [f64; 3]) -> RenderedImage {
    let frame = camera.frame();
    let (w, h) = (camera.width, camera.height);
    let sorted = sort_projected(set, &frame);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); camera.pixel_count()];
    for (s, g) in sorted.iter().enumerate() {
        if let Some([x0, x1, y0, y1]) = g.pixel_bounds(w, h) {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    lists[(y * w + x) as usize].push(s as u32);
                }
            }
        }
    }
    let mut img = RenderedImage::blank(w, h, bg);
    let px: Vec<([f64; 3], f64)> = lists
        .par_iter()
        .enumerate()
        .map(|(i, list)| {
            let (col, row) = (i as u32 % w, i as u32 / w);
            let gs: Vec<&ScreenGaussian> = list.iter().map(|&s| &sorted[s as usize]).collect();
            composite(&gs, col as f64 + 0.5, row as f64 + 0.5)
        })
        .collect();
    for (i, (c, t)) in px.into_iter().enumerate() {
        img.rgb[i] = [0, 1, 2].map(|k| c[k] + t * bg[k]);
        img.alpha[i] = 1.0 - t;
    }
    img
}
