//! Surface voxelization of triangle meshes.

use std::collections::BTreeSet;

use crate::decoders::TriMesh;
use crate::error::{Result, SlatError};
use crate::sparse::{SparseGrid, VoxelCoord};

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Separating-axis test between a triangle and the closed box with the
/// given center and half extent; touching counts as overlap.
pub fn triangle_box_overlap(tri: [[f64; 3]; 3], center: [f64; 3], half: f64) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];
    let separated = |axis: [f64; 3]| {
        let p = v.map(|q| dot(q, axis));
        let r = half * (axis[0].abs() + axis[1].abs() + axis[2].abs());
        let (lo, hi) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
        lo > r || hi < -r
    };
    let units = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for u in units {
        if separated(u) {
            return false;
        }
    }
    if separated(cross(e[0], e[1])) {
        return false;
    }
    for u in units {
        for ed in e {
            if separated(cross(u, ed)) {
                return false;
            }
        }
    }
    true
}

/// Active voxels of the `(-0.5, 0.5)^3` cube whose closed cell meets any
/// triangle. Only the surface is marked; interiors stay empty.
pub fn voxelize_mesh(mesh: &TriMesh, resolution: u32) -> Result<SparseGrid> {
    if mesh.is_empty() {
        return Err(SlatError::Empty("mesh has no triangles".into()));
    }
    mesh.validate()?;
    let n = resolution as f64;
    let half = 0.5 / n;
    let mut active = BTreeSet::new();
    for t in 0..mesh.triangles.len() {
        let c = mesh.corners(t);
        let lo = [0, 1, 2].map(|k| c.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min));
        let hi = [0, 1, 2].map(|k| c.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max));
        let first = lo.map(|v| ((v + 0.5) * n - 1.0).floor().max(0.0) as i64);
        let last = hi.map(|v| ((v + 0.5) * n + 1.0).floor().min(n - 1.0) as i64);
        for x in first[0]..=last[0] {
            for y in first[1]..=last[1] {
                for z in first[2]..=last[2] {
                    let center = [x, y, z].map(|i| (i as f64 + 0.5) / n - 0.5);
                    if triangle_box_overlap(c, center, half) {
                        active.insert(VoxelCoord::new(x as u32, y as u32, z as u32));
                    }
                }
            }
        }
    }
    SparseGrid::new(resolution, 0, active.into_iter().collect(), Vec::new())
}
