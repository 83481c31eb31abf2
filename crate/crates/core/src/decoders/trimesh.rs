use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlatError};

/// Triangle mesh with per-vertex colour and normal attributes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    if n > 0.0 { a.map(|v| v / n) } else { [0.0; 3] }
}

impl TriMesh {
    /// Mesh with mid-grey colours and area-weighted vertex normals.
    pub fn new(positions: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = positions.len();
        let mut m = Self { positions, colors: vec![[0.5; 3]; n], normals: vec![[0.0; 3]; n], triangles };
        m.validate()?;
        m.compute_vertex_normals();
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n || self.normals.len() != n {
            return Err(SlatError::Shape("vertex attribute count differs from vertex count".into()));
        }
        if self.triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(SlatError::OutOfRange("triangle index out of range".into()));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SlatError::NonFinite("vertex position".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        self.triangles[t].map(|i| self.positions[i as usize])
    }

    /// Unnormalized normal (twice the area) by the right-hand rule.
    pub fn face_cross(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        normalize(self.face_cross(t))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * norm(self.face_cross(t))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.positions.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_cross(t);
            for &i in &self.triangles[t] {
                for k in 0..3 {
                    acc[i as usize][k] += n[k];
                }
            }
        }
        self.normals = acc.into_iter().map(normalize).collect();
    }

    /// Drops triangles with area at or below `min_area` or repeated indices.
    pub fn remove_degenerate(&mut self, min_area: f64) -> usize {
        let before = self.triangles.len();
        let keep: Vec<[u32; 3]> = (0..before)
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                a != b && b != c && a != c && self.triangle_area(t) > min_area
            })
            .map(|t| self.triangles[t])
            .collect();
        self.triangles = keep;
        before - self.triangles.len()
    }

    /// Number of triangles incident to each undirected edge.
    pub fn edge_counts(&self) -> BTreeMap<(u32, u32), usize> {
        let mut m = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// Directed edges each appear once, so neighbouring faces agree on orientation.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.triangles.iter().all(|t| (0..3).all(|k| seen.insert((t[k], t[(k + 1) % 3]))))
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for &i in self.triangles.iter().flatten() {
            used[i as usize] = true;
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Signed volume enclosed by a closed mesh (positive when outward facing).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Axis-aligned cube with outward-facing triangles.
    pub fn cube(center: [f64; 3], side: f64) -> Self {
        let h = side / 2.0;
        let positions: Vec<[f64; 3]> = (0..8)
            .map(|k| {
                let s = [(k >> 2) & 1, (k >> 1) & 1, k & 1].map(|b| if b == 1 { h } else { -h });
                [center[0] + s[0], center[1] + s[1], center[2] + s[2]]
            })
            .collect();
        // Corner k has x bit 4, y bit 2, z bit 1.
        let quads = [
            [0, 1, 3, 2], // -x
            [4, 6, 7, 5], // +x
            [0, 4, 5, 1], // -y
            [2, 3, 7, 6], // +y
            [0, 2, 6, 4], // -z
            [1, 5, 7, 3], // +z
        ];
        let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        Self::new(positions, triangles).expect("cube is valid")
    }

    /// Icosphere obtained by `levels` rounds of midpoint subdivision.
    pub fn icosphere(center: [f64; 3], radius: f64, levels: usize) -> Self {
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = [
            [-1.0, p, 0.0], [1.0, p, 0.0], [-1.0, -p, 0.0], [1.0, -p, 0.0],
            [0.0, -1.0, p], [0.0, 1.0, p], [0.0, -1.0, -p], [0.0, 1.0, -p],
            [p, 0.0, -1.0], [p, 0.0, 1.0], [-p, 0.0, -1.0], [-p, 0.0, 1.0],
        ]
        .iter()
        .map(|&v| normalize(v))
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid: BTreeMap<(u32, u32), u32> = BTreeMap::new();
            let mut next = Vec::with_capacity(tris.len() * 4);
            for t in &tris {
                let mut m = [0u32; 3];
                for k in 0..3 {
                    let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                    m[k] = *mid.entry((a, b)).or_insert_with(|| {
                        let (pa, pb) = (verts[a as usize], verts[b as usize]);
                        verts.push(normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
                        (verts.len() - 1) as u32
                    });
                }
                next.push([t[0], m[0], m[2]]);
                next.push([t[1], m[1], m[0]]);
                next.push([t[2], m[2], m[1]]);
                next.push(m);
            }
            tris = next;
        }
        let positions = verts.iter().map(|v| [0, 1, 2].map(|k| center[k] + radius * v[k])).collect();
        Self::new(positions, tris).expect("icosphere is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_topology() {
        let c = TriMesh::cube([0.0; 3], 1.0);
        assert!(c.is_watertight());
        assert!(c.is_consistently_oriented());
        assert_eq!(c.euler_characteristic(), 2);
        assert!((c.signed_volume() - 1.0).abs() < 1e-12);
        assert!((c.surface_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_topology() {
        let s = TriMesh::icosphere([0.0; 3], 2.0, 3);
        assert!(s.is_watertight());
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.signed_volume() > 0.0);
        assert!(s.positions.iter().all(|p| (norm(*p) - 2.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_cleanup() {
        let mut m = TriMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]]).unwrap();
        assert_eq!(m.remove_degenerate(0.0), 2);
        assert_eq!(m.triangles, vec![[0, 1, 3]]);
        assert!(TriMesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).is_err());
    }
}
