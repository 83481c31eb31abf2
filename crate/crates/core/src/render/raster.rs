//! Z-buffered software rasterization of triangle meshes.

use rayon::prelude::*;

use super::image::RenderedImage;
use crate::decoders::TriMesh;
use crate::error::{Result, SlatError};
use crate::multiview::{Camera, Vec3};

/// Triangles with a vertex closer than this to the camera plane are skipped.
pub const RASTER_NEAR: f64 = 1e-3;

struct ScreenTri {
    index: usize,
    /// Screen positions and view depths of the three corners.
    p: [[f64; 2]; 3],
    z: [f64; 3],
}

fn edge(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> f64 {
    (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
}

/// Renders mask (alpha), depth, face normals, and interpolated colour and
/// normals. Pixel centers inside a triangle (edges inclusive) are covered;
/// the nearest triangle wins and equal depths keep the lower index.
pub fn rasterize_mesh(mesh: &TriMesh, camera: &Camera, bg: [f64; 3]) -> Result<RenderedImage> {
    if mesh.is_empty() {
        return Err(SlatError::Empty("mesh has no triangles".into()));
    }
    mesh.validate()?;
    let frame = camera.frame();
    let (w, h) = (camera.width, camera.height);
    let tris: Vec<ScreenTri> = mesh
        .triangles
        .iter()
        .enumerate()
        .filter_map(|(index, t)| {
            let mut p = [[0.0; 2]; 3];
            let mut z = [0.0; 3];
            for k in 0..3 {
                let pr = frame.project(&Vec3::from(mesh.positions[t[k] as usize]), w, h);
                if pr.depth <= RASTER_NEAR {
                    return None;
                }
                p[k] = [pr.u, pr.v];
                z[k] = pr.depth;
            }
            let area = edge(p[0], p[1], p[2][0], p[2][1]);
            (area != 0.0 && area.is_finite()).then_some(ScreenTri { index, p, z })
        })
        .collect();

    // Triangles overlapping each row, in index order.
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h as usize];
    for (s, t) in tris.iter().enumerate() {
        let lo = t.p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let hi = t.p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let r0 = (lo - 0.5).ceil().max(0.0);
        let r1 = (hi - 0.5).floor().min(h as f64 - 1.0);
        if r0 <= r1 {
            for r in r0 as usize..=r1 as usize {
                rows[r].push(s as u32);
            }
        }
    }

    type Px = (f64, usize, [f64; 3]);
    let hits: Vec<Vec<Option<Px>>> = rows
        .par_iter()
        .enumerate()
        .map(|(row, list)| {
            let y = row as f64 + 0.5;
            let mut line: Vec<Option<Px>> = vec![None; w as usize];
            for &s in list {
                let t = &tris[s as usize];
                let area = edge(t.p[0], t.p[1], t.p[2][0], t.p[2][1]);
                let lo = t.p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
                let hi = t.p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
                let c0 = (lo - 0.5).ceil().max(0.0);
                let c1 = (hi - 0.5).floor().min(w as f64 - 1.0);
                if c0 > c1 {
                    continue;
                }
                for col in c0 as usize..=c1 as usize {
                    let x = col as f64 + 0.5;
                    // Screen-space barycentrics.
                    let b = [
                        edge(t.p[1], t.p[2], x, y) / area,
                        edge(t.p[2], t.p[0], x, y) / area,
                        edge(t.p[0], t.p[1], x, y) / area,
                    ];
                    if b.iter().any(|&v| v < 0.0) {
                        continue;
                    }
                    // Perspective-correct weights and depth.
                    let inv = [b[0] / t.z[0], b[1] / t.z[1], b[2] / t.z[2]];
                    let s_inv = inv[0] + inv[1] + inv[2];
                    let depth = 1.0 / s_inv;
                    let nearer = match line[col] {
                        None => true,
                        Some((d, i, _)) => depth < d || (depth == d && t.index < i),
                    };
                    if nearer {
                        line[col] = Some((depth, t.index, inv.map(|v| v / s_inv)));
                    }
                }
            }
            line
        })
        .collect();

    let n = camera.pixel_count();
    let mut img = RenderedImage::blank(w, h, bg);
    let mut depth = vec![f64::INFINITY; n];
    let mut normal = vec![[0.0; 3]; n];
    let mut geo = vec![[0.0; 3]; n];
    for (row, line) in hits.into_iter().enumerate() {
        for (col, px) in line.into_iter().enumerate() {
            let Some((d, ti, wts)) = px else { continue };
            let i = row * w as usize + col;
            let tri = mesh.triangles[ti];
            let lerp = |attr: &[[f64; 3]]| {
                let mut out = [0.0; 3];
                for k in 0..3 {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += wts[k] * attr[tri[k] as usize][c];
                    }
                }
                out
            };
            img.alpha[i] = 1.0;
            img.rgb[i] = lerp(&mesh.colors);
            depth[i] = d;
            normal[i] = crate::decoders::normalize(lerp(&mesh.normals));
            geo[i] = mesh.face_normal(ti);
        }
    }
    img.depth = Some(depth);
    img.normal = Some(normal);
    img.geo_normal = Some(geo);
    Ok(img)
}
