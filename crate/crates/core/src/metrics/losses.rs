//! Training objectives for the decoders.

use std::collections::HashMap;

use serde::Serialize;

use crate::decoders::{dot, sub, Extraction, FlexiAccessor, GaussianSet, TriMesh, RAW_GAUSSIAN};
use crate::defaults::{
    DEPTH_HUBER_WEIGHT, HUBER_DELTA, MESH_COLOR_WEIGHT, MIN_GAUSSIAN_SCALE, PERCEPTUAL_WEIGHT, SSIM_WEIGHT,
    TSDF_WEIGHT,
};
use crate::error::{Result, SlatError};
use crate::numeric::{sigmoid, softplus};
use crate::render::{image_l1, image_ssim, RenderedImage};

/// Perceptual distance slot; the default contributes nothing.
pub trait Perceptual: Sync {
    fn distance(&self, a: &RenderedImage, b: &RenderedImage) -> Result<f64>;
}

pub struct NoPerceptual;

impl Perceptual for NoPerceptual {
    fn distance(&self, _: &RenderedImage, _: &RenderedImage) -> Result<f64> {
        Ok(0.0)
    }
}

/// `L1 + 0.2 (1 - SSIM) + 0.2 perceptual`, averaged over image pairs.
pub fn recon_loss(renders: &[RenderedImage], refs: &[RenderedImage], p: &dyn Perceptual) -> Result<f64> {
    if renders.len() != refs.len() || renders.is_empty() {
        return Err(SlatError::Shape(format!("{} renders vs {} references", renders.len(), refs.len())));
    }
    let mut total = 0.0;
    for (a, b) in renders.iter().zip(refs) {
        total += image_l1(a, b)? + SSIM_WEIGHT * (1.0 - image_ssim(a, b)?) + PERCEPTUAL_WEIGHT * p.distance(a, b)?;
    }
    Ok(total / renders.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GsLoss {
    pub recon: f64,
    pub volume: f64,
    pub opacity: f64,
    pub total: f64,
}

/// Mean product of scales and mean `(1 - alpha)^2`.
pub fn gs_regularizers(set: &GaussianSet) -> (f64, f64) {
    let n = set.len().max(1) as f64;
    let vol = set.gaussians.iter().map(|g| g.scale.iter().product::<f64>()).sum::<f64>() / n;
    let op = set.gaussians.iter().map(|g| (1.0 - g.opacity).powi(2)).sum::<f64>() / n;
    (vol, op)
}

pub fn loss_gs(renders: &[RenderedImage], refs: &[RenderedImage], set: &GaussianSet, p: &dyn Perceptual) -> Result<GsLoss> {
    let recon = recon_loss(renders, refs, p)?;
    let (volume, opacity) = gs_regularizers(set);
    Ok(GsLoss { recon, volume, opacity, total: recon + volume + opacity })
}

/// `L_vol + L_alpha` straight from raw head outputs (14 per Gaussian).
pub fn gs_regularizers_raw(raw: &[f64]) -> f64 {
    let n = (raw.len() / RAW_GAUSSIAN).max(1) as f64;
    raw.chunks(RAW_GAUSSIAN)
        .map(|r| {
            let vol: f64 = (3..6).map(|i| MIN_GAUSSIAN_SCALE + softplus(r[i])).product();
            vol + (1.0 - sigmoid(r[6])).powi(2)
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`gs_regularizers_raw`].
pub fn gs_regularizers_raw_grad(raw: &[f64]) -> Vec<f64> {
    let n = (raw.len() / RAW_GAUSSIAN).max(1) as f64;
    let mut g = vec![0.0; raw.len()];
    for (r, gr) in raw.chunks(RAW_GAUSSIAN).zip(g.chunks_mut(RAW_GAUSSIAN)) {
        let s: Vec<f64> = (3..6).map(|i| MIN_GAUSSIAN_SCALE + softplus(r[i])).collect();
        for k in 0..3 {
            gr[3 + k] = s[(k + 1) % 3] * s[(k + 2) % 3] * sigmoid(r[3 + k]) / n;
        }
        let a = sigmoid(r[6]);
        gr[6] = -2.0 * (1.0 - a) * a * (1.0 - a) / n;
    }
    g
}

/// Quadratic within `delta`, linear beyond.
pub fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta { 0.5 * e * e } else { delta * (e.abs() - 0.5 * delta) }
}

pub fn huber_grad(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Mean Huber depth error over pixels covered in both images.
pub fn depth_huber(render: &RenderedImage, reference: &RenderedImage, delta: f64) -> Result<f64> {
    let (Some(a), Some(b)) = (&render.depth, &reference.depth) else {
        return Err(SlatError::Shape("depth plane missing".into()));
    };
    if a.len() != b.len() {
        return Err(SlatError::Shape("depth planes differ in size".into()));
    }
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..a.len() {
        if render.alpha[i] > 0.5 && reference.alpha[i] > 0.5 && a[i].is_finite() && b[i].is_finite() {
            s += huber(a[i] - b[i], delta);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Closest point of triangle `abc` to `p`.
pub fn closest_on_triangle(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let add = |u: [f64; 3], v: [f64; 3], s: f64| [u[0] + s * v[0], u[1] + s * v[1], u[2] + s * v[2]];
    let (ab, ac, ap) = (sub(b, a), sub(c, a), sub(p, a));
    let (d1, d2) = (dot(ab, ap), dot(ac, ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let (d3, d4) = (dot(ab, bp), dot(ac, bp));
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return add(a, ab, d1 / (d1 - d3));
    }
    let cp = sub(p, c);
    let (d5, d6) = (dot(ab, cp), dot(ac, cp));
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return add(a, ac, d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return add(b, sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    add(add(a, ab, vb * denom), ac, vc * denom)
}

/// Unsigned distance to a mesh, saturated at `clamp`. Triangles are hashed
/// into cubes of side `clamp` so each query only visits nearby faces.
pub struct ClampedDistance<'a> {
    mesh: &'a TriMesh,
    clamp: f64,
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> ClampedDistance<'a> {
    pub fn new(mesh: &'a TriMesh, clamp: f64) -> Self {
        let key = |v: f64| (v / clamp).floor() as i64;
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let c = tri.map(|i| mesh.positions[i as usize]);
            let lo = [0, 1, 2].map(|k| key(c.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min) - clamp));
            let hi = [0, 1, 2].map(|k| key(c.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) + clamp));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        buckets.entry([x, y, z]).or_default().push(t as u32);
                    }
                }
            }
        }
        Self { mesh, clamp, buckets }
    }

    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let k = p.map(|v| (v / self.clamp).floor() as i64);
        let mut best = self.clamp;
        if let Some(list) = self.buckets.get(&k) {
            for &t in list {
                let [a, b, c] = self.mesh.corners(t as usize);
                let d = sub(p, closest_on_triangle(p, a, b, c));
                best = best.min(dot(d, d).sqrt());
            }
        }
        best
    }
}

/// Mean squared difference between clamped predicted SDF values and the
/// clamped signed distance of each vertex to the extracted surface (sign
/// taken from the prediction).
pub fn tsdf_loss(vertices: &[([f64; 3], f64)], mesh: &TriMesh, clamp: f64) -> f64 {
    if vertices.is_empty() {
        return 0.0;
    }
    let dist = ClampedDistance::new(mesh, clamp);
    let s: f64 = vertices
        .iter()
        .map(|&(p, d)| {
            let target = dist.distance(p).copysign(d);
            (d.clamp(-clamp, clamp) - target).powi(2)
        })
        .sum();
    s / vertices.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshLoss {
    pub mask: f64,
    pub depth: f64,
    pub geo_normal: f64,
    pub color: f64,
    pub normal: f64,
    pub consist: f64,
    pub dev: f64,
    pub tsdf: f64,
    pub geo: f64,
    pub color_total: f64,
    pub reg: f64,
    pub total: f64,
}

fn plane_image(img: &RenderedImage, plane: impl Fn(usize) -> [f64; 3]) -> RenderedImage {
    let mut out = RenderedImage::blank(img.width, img.height, [0.0; 3]);
    for i in 0..img.pixel_count() {
        out.rgb[i] = plane(i);
    }
    out
}

/// Normals mapped from `[-1, 1]` to `[0, 1]` so they compare like colours.
fn normal_image(img: &RenderedImage, geo: bool) -> Result<RenderedImage> {
    let plane = if geo { &img.geo_normal } else { &img.normal };
    let n = plane.as_ref().ok_or_else(|| SlatError::Shape("normal plane missing".into()))?;
    Ok(plane_image(img, |i| n[i].map(|v| 0.5 * (v + 1.0))))
}

/// Full mesh objective. `renders` come from the rasterizer; `refs` must
/// carry the same planes.
pub fn loss_mesh(
    renders: &[RenderedImage],
    refs: &[RenderedImage],
    acc: &FlexiAccessor,
    ex: &Extraction,
    p: &dyn Perceptual,
) -> Result<MeshLoss> {
    if renders.len() != refs.len() || renders.is_empty() {
        return Err(SlatError::Shape(format!("{} renders vs {} references", renders.len(), refs.len())));
    }
    let views = renders.len() as f64;
    let (mut mask, mut depth) = (0.0, 0.0);
    let (mut gn_a, mut gn_b, mut n_a, mut n_b) = (vec![], vec![], vec![], vec![]);
    for (a, b) in renders.iter().zip(refs) {
        let ma = plane_image(a, |i| [a.alpha[i]; 3]);
        let mb = plane_image(b, |i| [b.alpha[i]; 3]);
        mask += image_l1(&ma, &mb)? / views;
        depth += depth_huber(a, b, HUBER_DELTA)? / views;
        gn_a.push(normal_image(a, true)?);
        gn_b.push(normal_image(b, true)?);
        n_a.push(normal_image(a, false)?);
        n_b.push(normal_image(b, false)?);
    }
    let geo_normal = recon_loss(&gn_a, &gn_b, p)?;
    let color = recon_loss(renders, refs, p)?;
    let normal = recon_loss(&n_a, &n_b, p)?;
    let consist = if acc.variance.is_empty() { 0.0 } else { acc.variance.values().sum::<f64>() / acc.variance.len() as f64 };
    let dev = if ex.deviation.is_empty() { 0.0 } else { ex.deviation.iter().sum::<f64>() / ex.deviation.len() as f64 };
    let res = acc.resolution as f64;
    let verts: Vec<([f64; 3], f64)> = acc
        .vertices
        .iter()
        .map(|(v, d)| ([0, 1, 2].map(|k| (v[k] as f64 + d.deform[k]) / res - 0.5), d.sdf))
        .collect();
    let tsdf = tsdf_loss(&verts, &ex.mesh, 1.0 / res);
    let geo = mask + DEPTH_HUBER_WEIGHT * depth + geo_normal;
    let color_total = color + normal;
    let reg = consist + dev + TSDF_WEIGHT * tsdf;
    Ok(MeshLoss {
        mask,
        depth,
        geo_normal,
        color,
        normal,
        consist,
        dev,
        tsdf,
        geo,
        color_total,
        reg,
        total: geo + MESH_COLOR_WEIGHT * color_total + reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{activate_gaussian, densify, flexicubes_extract, DenseSdf, FlexiGrid, SdfVolume};
    use crate::metrics::fd_gradcheck;
    use crate::multiview::Camera;
    use crate::render::rasterize_mesh;
    use crate::sparse::VoxelCoord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regularizer_examples() {
        let mut g = activate_gaussian(&[0.0; RAW_GAUSSIAN], VoxelCoord::new(0, 0, 0), 64);
        g.scale = [1e-3; 3];
        g.opacity = 1.0;
        let set = GaussianSet { resolution: 64, gaussians: vec![g] };
        let (vol, op) = gs_regularizers(&set);
        assert!((vol - 1e-9).abs() < 1e-24);
        assert_eq!(op, 0.0);
    }

    #[test]
    fn regularizer_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..RAW_GAUSSIAN * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = gs_regularizers_raw_grad(&raw);
        let r = fd_gradcheck(gs_regularizers_raw, &raw, &g, 1e-6).unwrap();
        // Offsets, colours, rotations do not enter: both sides are zero there.
        assert!(r.max_rel < 1e-5, "{}", r.max_rel);
    }

    #[test]
    fn huber_regimes() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(-3.0, 1.0), 2.5);
        let xs = [-2.5, -0.7, 0.2, 0.9, 1.7];
        let g: Vec<f64> = xs.iter().map(|&e| huber_grad(e, 1.0)).collect();
        let r = fd_gradcheck(|p| p.iter().map(|&e| huber(e, 1.0)).sum(), &xs, &g, 1e-6).unwrap();
        assert!(r.max_rel < 1e-6);
    }

    #[test]
    fn depth_offset_huber() {
        let cam = Camera::new([0.0, 0.0, 3.0], 40.0, 16, 16).unwrap();
        let a = rasterize_mesh(&TriMesh::cube([0.0; 3], 1.0), &cam, [0.0; 3]).unwrap();
        let mut b = a.clone();
        for d in b.depth.as_mut().unwrap() {
            *d += 0.5;
        }
        assert_eq!(depth_huber(&a, &b, 1.0).unwrap(), 0.125);
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = ([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let p = closest_on_triangle([0.2, 0.2, 1.0], a, b, c);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15 && p[2] == 0.0);
        assert_eq!(closest_on_triangle([-1.0, -1.0, 0.0], a, b, c), a);
        assert_eq!(closest_on_triangle([0.5, -1.0, 0.0], a, b, c), [0.5, 0.0, 0.0]);
        let p = closest_on_triangle([1.0, 1.0, 0.0], a, b, c);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sphere_tsdf_is_small() {
        let res = 32;
        let sdf = DenseSdf::from_fn(res, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 0.3);
        let ex = flexicubes_extract(&sdf).unwrap();
        let m = res + 1;
        let mut verts = Vec::new();
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    verts.push((DenseSdf::vertex_position([x, y, z], res), sdf.vertex([x, y, z]).sdf));
                }
            }
        }
        let l = tsdf_loss(&verts, &ex.mesh, 1.0 / res as f64);
        assert!(l < 1e-4, "{l}");
    }

    #[test]
    fn perfect_mesh_renders_have_zero_image_terms() {
        let grid = {
            use crate::decoders::{activate_flexi, FLEXI_CHANNELS, SDF};
            use crate::sparse::SparseGrid;
            // One voxel per cell and a cube of negative corners.
            let mut coords = Vec::new();
            let mut feats = Vec::new();
            for x in 0..6u32 {
                for y in 0..6u32 {
                    for z in 0..6u32 {
                        coords.push(VoxelCoord::new(x, y, z));
                        let mut f = activate_flexi(&[0.0; FLEXI_CHANNELS]);
                        for k in 0..8 {
                            let o = crate::decoders::corner_offset(k);
                            let v = [x + o[0], y + o[1], z + o[2]];
                            f[SDF + k] = if v.iter().all(|&c| (2..=4).contains(&c)) { -0.5 } else { 0.5 };
                        }
                        feats.extend(f);
                    }
                }
            }
            FlexiGrid::new(SparseGrid::from_unsorted(8, FLEXI_CHANNELS, coords, feats).unwrap()).unwrap()
        };
        let acc = densify(&grid);
        let ex = flexicubes_extract(&acc).unwrap();
        let cam = Camera::new([0.3, 0.4, 2.0], 40.0, 24, 24).unwrap();
        let r = rasterize_mesh(&ex.mesh, &cam, [1.0; 3]).unwrap();
        let l = loss_mesh(std::slice::from_ref(&r), std::slice::from_ref(&r), &acc, &ex, &NoPerceptual).unwrap();
        assert!(l.mask == 0.0 && l.depth == 0.0 && l.consist == 0.0);
        assert!(l.color.abs() < 1e-12 && l.normal.abs() < 1e-12);
        let parts = l.geo + MESH_COLOR_WEIGHT * l.color_total + l.reg;
        assert!((l.total - parts).abs() < 1e-12);
    }
}
