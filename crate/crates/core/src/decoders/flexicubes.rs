//! Dual isosurface extraction with FlexiCubes weights.

use std::collections::{BTreeMap, BTreeSet};

use super::flexi::{corner_offset, SdfVolume, VertexData, CELL_EDGES};
use super::trimesh::{dot, normalize, sub, TriMesh};
use crate::error::{Result, SlatError};

/// Extracted mesh plus, per dual vertex, its squared distance to the
/// centroid of the crossings it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub mesh: TriMesh,
    /// Cell of each dual vertex, in mesh vertex order.
    pub cells: Vec<[u32; 3]>,
    pub deviation: Vec<f64>,
}

struct Crossing {
    pos: [f64; 3],
    color: [f64; 3],
    normal: [f64; 3],
}

fn vertex_pos(v: [u32; 3], d: &VertexData, res: u32) -> [f64; 3] {
    let n = res as f64;
    [0, 1, 2].map(|k| (v[k] as f64 + d.deform[k]) / n - 0.5)
}

fn lerp3(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + w * (b[k] - a[k]))
}

/// Crossing on the edge `a -> b` (exactly one side negative). With alpha
/// weights the SDF values are rescaled before linear interpolation.
fn crossing(pa: [f64; 3], da: &VertexData, aa: f64, pb: [f64; 3], db: &VertexData, ab: f64) -> Crossing {
    let (sa, sb) = (da.sdf * aa, db.sdf * ab);
    // Weight of b in the mix; sa and sb have opposite signs or sb is zero.
    let w = sa / (sa - sb);
    Crossing { pos: lerp3(pa, pb, w), color: lerp3(da.color, db.color, w), normal: lerp3(da.normal, db.normal, w) }
}

fn inside(d: &VertexData) -> bool {
    d.sdf < 0.0
}

/// Extracts the zero level set of `vol`. One dual vertex is placed per
/// surface cell and one quad per interior sign-change edge.
pub fn flexicubes_extract(vol: &dyn SdfVolume) -> Result<Extraction> {
    let res = vol.resolution();
    let neg = vol.negative_vertices();
    // Sign-change edges as (lower vertex, axis).
    let mut edges = BTreeSet::new();
    for &v in &neg {
        for a in 0..3 {
            if v[a] < res {
                let mut u = v;
                u[a] += 1;
                if !inside(&vol.vertex(u)) {
                    edges.insert((v, a));
                }
            }
            if v[a] > 0 {
                let mut u = v;
                u[a] -= 1;
                if !inside(&vol.vertex(u)) {
                    edges.insert((u, a));
                }
            }
        }
    }
    if edges.is_empty() {
        return Err(SlatError::Empty("SDF has no sign change".into()));
    }

    // Cells around each edge, counter-clockwise about the +axis direction.
    let ring = |v: [u32; 3], a: usize| -> Option<[[u32; 3]; 4]> {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let mut out = [[0u32; 3]; 4];
        for (k, (db, dc)) in [(-1i64, -1i64), (0, -1), (0, 0), (-1, 0)].into_iter().enumerate() {
            let (cb, cc) = (v[b] as i64 + db, v[c] as i64 + dc);
            if v[a] >= res || cb < 0 || cc < 0 || cb >= res as i64 || cc >= res as i64 {
                return None;
            }
            let mut cell = v;
            cell[b] = cb as u32;
            cell[c] = cc as u32;
            out[k] = cell;
        }
        Some(out)
    };

    let mut surface = BTreeSet::new();
    for &(v, a) in &edges {
        if let Some(r) = ring(v, a) {
            surface.extend(r);
        }
    }

    let mut index = BTreeMap::new();
    let mut cells = Vec::with_capacity(surface.len());
    let mut positions = Vec::with_capacity(surface.len());
    let mut colors = Vec::with_capacity(surface.len());
    let mut normals = Vec::with_capacity(surface.len());
    let mut deviation = Vec::with_capacity(surface.len());
    let mut gammas = Vec::with_capacity(surface.len());
    for &cell in &surface {
        let w = vol.cell(cell);
        let corners: Vec<([u32; 3], VertexData)> = (0..8)
            .map(|k| {
                let o = corner_offset(k);
                let v = [cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]];
                (v, vol.vertex(v))
            })
            .collect();
        let pos: Vec<[f64; 3]> = corners.iter().map(|(v, d)| vertex_pos(*v, d, res)).collect();
        let mut xs = Vec::new();
        let mut betas = Vec::new();
        for (e, &(i, j)) in CELL_EDGES.iter().enumerate() {
            let (di, dj) = (&corners[i].1, &corners[j].1);
            if inside(di) != inside(dj) {
                let (p, q) = if inside(di) { (i, j) } else { (j, i) };
                xs.push(crossing(pos[p], &corners[p].1, w.alpha[p], pos[q], &corners[q].1, w.alpha[q]));
                betas.push(w.beta[e]);
            }
        }
        let bsum: f64 = betas.iter().sum();
        let mut dual = [0.0; 3];
        let mut color = [0.0; 3];
        let mut normal = [0.0; 3];
        let mut centroid = [0.0; 3];
        for (x, b) in xs.iter().zip(&betas) {
            for k in 0..3 {
                dual[k] += b * x.pos[k] / bsum;
                color[k] += b * x.color[k] / bsum;
                normal[k] += b * x.normal[k] / bsum;
                centroid[k] += x.pos[k] / xs.len() as f64;
            }
        }
        let off = sub(dual, centroid);
        index.insert(cell, positions.len() as u32);
        cells.push(cell);
        positions.push(dual);
        colors.push(color);
        normals.push(normalize(normal));
        deviation.push(dot(off, off));
        gammas.push(w.gamma);
    }

    let mut triangles = Vec::new();
    for &(v, a) in &edges {
        let Some(r) = ring(v, a) else { continue };
        let mut q = r.map(|c| index[&c]);
        // The ring order faces +axis; the surface must face away from the inside.
        let mut u = v;
        u[a] += 1;
        if inside(&vol.vertex(u)) {
            q.reverse();
        }
        let g = q.map(|i| gammas[i as usize]);
        let (g02, g13) = (g[0] * g[2], g[1] * g[3]);
        let p = q.map(|i| positions[i as usize]);
        let diag = |i: usize, j: usize| {
            let d = sub(p[i], p[j]);
            dot(d, d)
        };
        // Larger gamma product keeps its diagonal. Ties (neutral weights)
        // fall back to the shorter diagonal instead of a fixed one.
        let split02 = if g02 != g13 { g02 > g13 } else { diag(0, 2) <= diag(1, 3) };
        if split02 {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        } else {
            triangles.push([q[0], q[1], q[3]]);
            triangles.push([q[1], q[2], q[3]]);
        }
    }
    if triangles.is_empty() {
        return Err(SlatError::Empty("isosurface touches only border cells".into()));
    }

    let mut mesh = TriMesh { positions, colors, normals, triangles };
    // Volumes without normal attributes get geometric normals.
    if mesh.normals.iter().all(|n| *n == [0.0; 3]) {
        mesh.compute_vertex_normals();
    }
    mesh.validate()?;
    Ok(Extraction { mesh, cells, deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::flexi::{densify, DenseSdf, FlexiGrid, activate_flexi, FLEXI_CHANNELS, SDF, COLOR};
    use crate::decoders::trimesh::norm;
    use crate::sparse::{SparseGrid, VoxelCoord};

    fn sphere(res: u32, r: f64) -> DenseSdf {
        DenseSdf::from_fn(res, |p| norm(p) - r)
    }

    #[test]
    fn sphere_is_closed_genus_zero() {
        let ex = flexicubes_extract(&sphere(64, 0.3)).unwrap();
        let m = &ex.mesh;
        assert!(m.is_watertight());
        assert!(m.is_consistently_oriented());
        assert_eq!(m.euler_characteristic(), 2);
        for p in &m.positions {
            assert!((norm(*p) - 0.3).abs() <= 2.0 / 64.0);
        }
        // Outward orientation.
        assert!(m.signed_volume() > 0.0);
        let v = 4.0 / 3.0 * std::f64::consts::PI * 0.027;
        assert!((m.signed_volume() - v).abs() / v < 0.02);
    }

    #[test]
    fn plane_faces_up() {
        let ex = flexicubes_extract(&DenseSdf::from_fn(16, |p| p[2] - 0.1)).unwrap();
        for p in &ex.mesh.positions {
            assert!((p[2] - 0.1).abs() < 1.0 / 16.0);
        }
        for t in 0..ex.mesh.triangles.len() {
            let n = ex.mesh.face_normal(t);
            assert!((n[2] - 1.0).abs() < 1e-3, "{n:?}");
        }
        assert!(ex.deviation.iter().all(|&d| d < 1e-20));
    }

    #[test]
    fn constant_sdf_is_rejected() {
        let e = flexicubes_extract(&DenseSdf::from_fn(8, |_| 1.0));
        assert!(matches!(e, Err(SlatError::Empty(_))));
        let e = flexicubes_extract(&DenseSdf::from_fn(8, |_| 0.0));
        assert!(matches!(e, Err(SlatError::Empty(_))));
    }

    #[test]
    fn alpha_moves_crossing() {
        let da = VertexData { sdf: -1.0, ..VertexData::INACTIVE };
        let db = VertexData { sdf: 1.0, ..VertexData::INACTIVE };
        let c = crossing([0.0; 3], &da, 1.0, [1.0, 0.0, 0.0], &db, 1.0);
        assert_eq!(c.pos, [0.5, 0.0, 0.0]);
        let c = crossing([0.0; 3], &da, 3.0, [1.0, 0.0, 0.0], &db, 1.0);
        assert_eq!(c.pos, [0.75, 0.0, 0.0]);
    }

    #[test]
    fn flexi_grid_cube_extracts() {
        // A 2^3 block of negative corners inside active cells.
        let res = 8;
        let mut coords = Vec::new();
        let mut feats = Vec::new();
        for x in 2..6 {
            for y in 2..6 {
                for z in 2..6 {
                    coords.push(VoxelCoord::new(x, y, z));
                    let mut f = activate_flexi(&[0.0; FLEXI_CHANNELS]);
                    for k in 0..8 {
                        let o = corner_offset(k);
                        let v = [x + o[0], y + o[1], z + o[2]];
                        f[SDF + k] = if v.iter().all(|&c| (3..=5).contains(&c)) { -0.5 } else { 0.5 };
                    }
                    f[COLOR..COLOR + 24].fill(0.25);
                    feats.extend(f);
                }
            }
        }
        let g = FlexiGrid::new(SparseGrid::from_unsorted(res, FLEXI_CHANNELS, coords, feats).unwrap()).unwrap();
        let ex = flexicubes_extract(&densify(&g)).unwrap();
        assert!(ex.mesh.is_watertight());
        assert_eq!(ex.mesh.euler_characteristic(), 2);
        assert!(ex.mesh.colors.iter().flatten().all(|&c| (c - 0.25).abs() < 1e-12));
        assert!(ex.mesh.signed_volume() > 0.0);
    }
}
