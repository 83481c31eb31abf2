//! Emission-absorption ray marching of radiance fields.

use rayon::prelude::*;

use super::image::RenderedImage;
use crate::decoders::CpRadianceField;
use crate::error::{Result, SlatError};
use crate::multiview::{Camera, Vec3};

/// Half a texel of the 512^3 field.
pub const DEFAULT_STEP: f64 = 0.5 / 512.0;
pub const DEFAULT_BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];

/// Anything that answers `(rgb, density)` at a world point.
pub trait RadianceField: Sync {
    fn sample(&self, p: [f64; 3]) -> ([f64; 3], f64);
}

impl RadianceField for CpRadianceField {
    fn sample(&self, p: [f64; 3]) -> ([f64; 3], f64) {
        CpRadianceField::sample(self, p)
    }
}

impl<F: Fn([f64; 3]) -> ([f64; 3], f64) + Sync> RadianceField for F {
    fn sample(&self, p: [f64; 3]) -> ([f64; 3], f64) {
        self(p)
    }
}

/// Parametric entry/exit of a ray with the `(-0.5, 0.5)^3` cube.
pub fn ray_box(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if dir[k] == 0.0 {
            if !(-0.5..=0.5).contains(&origin[k]) {
                return None;
            }
            continue;
        }
        let a = (-0.5 - origin[k]) / dir[k];
        let b = (0.5 - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 < t1).then_some((t0, t1))
}

/// One ray: `(rgb without background, transmittance, expected distance)`.
/// Samples sit at segment midpoints; the last segment is shortened to end
/// on the exit point.
pub fn march_ray(field: &dyn RadianceField, origin: &Vec3, dir: &Vec3, step: f64) -> ([f64; 3], f64, f64) {
    let Some((t0, t1)) = ray_box(origin, dir) else {
        return ([0.0; 3], 1.0, f64::INFINITY);
    };
    let mut c = [0.0; 3];
    let mut trans = 1.0;
    let (mut wsum, mut dsum) = (0.0, 0.0);
    let mut a = t0;
    while a < t1 {
        let b = (a + step).min(t1);
        let mid = 0.5 * (a + b);
        let p = origin + dir * mid;
        let (rgb, sigma) = field.sample([p.x, p.y, p.z]);
        if sigma > 0.0 {
            let w = trans * (1.0 - (-sigma * (b - a)).exp());
            for k in 0..3 {
                c[k] += w * rgb[k];
            }
            wsum += w;
            dsum += w * mid;
            trans *= (-sigma * (b - a)).exp();
        }
        a = b;
    }
    (c, trans, if wsum > 0.0 { dsum / wsum } else { f64::INFINITY })
}

pub fn raymarch_field(field: &dyn RadianceField, camera: &Camera, step: f64, bg: [f64; 3]) -> Result<RenderedImage> {
    if !(step > 0.0) {
        return Err(SlatError::OutOfRange(format!("step must be positive, got {step}")));
    }
    let frame = camera.frame();
    let w = camera.width;
    let px: Vec<([f64; 3], f64, f64)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|i| {
            let (col, row) = (i as u32 % w, i as u32 / w);
            let dir = frame.ray_dir(col as f64 + 0.5, row as f64 + 0.5);
            let (c, t, dist) = march_ray(field, &frame.origin, &dir, step);
            (c, t, dist * dir.dot(&frame.forward))
        })
        .collect();
    let mut img = RenderedImage::blank(w, camera.height, bg);
    let mut depth = vec![f64::INFINITY; img.pixel_count()];
    for (i, (c, t, d)) in px.into_iter().enumerate() {
        img.rgb[i] = [0, 1, 2].map(|k| c[k] + t * bg[k]);
        img.alpha[i] = 1.0 - t;
        depth[i] = d;
    }
    img.depth = Some(depth);
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_field_is_background() {
        let cam = Camera::new([0.0, 0.0, 2.0], 40.0, 8, 8).unwrap();
        let img = raymarch_field(&|_: [f64; 3]| ([1.0; 3], 0.0), &cam, 0.01, [0.5; 3]).unwrap();
        assert!(img.alpha.iter().all(|&a| a == 0.0));
        assert!(img.rgb.iter().all(|p| *p == [0.5; 3]));
        assert!(img.depth.unwrap().iter().all(|d| d.is_infinite()));
        assert!(raymarch_field(&|_: [f64; 3]| ([1.0; 3], 0.0), &cam, 0.0, [0.5; 3]).is_err());
    }

    #[test]
    fn uniform_box_is_exact() {
        // Constant density filling the whole cube: every segment is exact.
        let o = Vec3::new(0.0, 0.0, 2.0);
        let d = Vec3::new(0.0, 0.0, -1.0);
        let (c, t, dist) = march_ray(&|_: [f64; 3]| ([0.2, 0.4, 0.6], 3.0), &o, &d, 0.03);
        assert!((t - (-3.0f64).exp()).abs() < 1e-12);
        assert!((c[1] - 0.4 * (1.0 - (-3.0f64).exp())).abs() < 1e-12);
        assert!(dist > 1.5 && dist < 2.0);
    }

    #[test]
    fn ray_box_hits() {
        let (a, b) = ray_box(&Vec3::new(0.0, 0.0, 2.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((a - 1.5).abs() < 1e-15 && (b - 2.5).abs() < 1e-15);
        assert!(ray_box(&Vec3::new(0.0, 2.0, 2.0), &Vec3::new(0.0, 0.0, -1.0)).is_none());
    }
}
