//! Structure-level operators on sparse grids.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{SparseGrid, VoxelCoord};
use crate::numeric::exact_sum;
use crate::error::{Result, SlatError};

/// 3x3x3 kernel. `weights[(tap * cin + i) * cout + o]` with
/// `tap = (dx+1)*9 + (dy+1)*3 + (dz+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub cin: usize,
    pub cout: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(cin: usize, cout: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != 27 * cin * cout || bias.len() != cout {
            return Err(SlatError::Shape(format!(
                "kernel {cin}->{cout} needs {} weights and {cout} biases, got {} and {}",
                27 * cin * cout,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { cin, cout, weights, bias })
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self { cin, cout, weights: vec![0.0; 27 * cin * cout], bias: vec![0.0; cout] }
    }

    /// Center tap is the identity, every other tap zero.
    pub fn identity(c: usize) -> Self {
        let mut k = Self::zeros(c, c);
        for i in 0..c {
            k.weights[(Self::CENTER * c + i) * c + i] = 1.0;
        }
        k
    }

    pub const CENTER: usize = 13;

    pub fn tap_index(d: [i32; 3]) -> usize {
        ((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize
    }

    pub fn tap_offset(tap: usize) -> [i32; 3] {
        let t = tap as i32;
        [t / 9 - 1, (t / 3) % 3 - 1, t % 3 - 1]
    }

    pub fn weight(&self, tap: usize, i: usize, o: usize) -> f64 {
        self.weights[(tap * self.cin + i) * self.cout + o]
    }
}

/// Average pooling by 2 over active children only.
pub fn avg_pool2(grid: &SparseGrid) -> Result<SparseGrid> {
    let res = grid.resolution();
    if !res.is_multiple_of(2) {
        return Err(SlatError::Resolution(format!("cannot pool odd resolution {res}")));
    }
    let c = grid.channels();
    let mut children: BTreeMap<VoxelCoord, Vec<usize>> = BTreeMap::new();
    for (i, coord) in grid.coords().iter().enumerate() {
        children.entry(coord.parent()).or_default().push(i);
    }
    let mut coords = Vec::with_capacity(children.len());
    let mut features = Vec::with_capacity(children.len() * c);
    for (coord, rows) in children {
        coords.push(coord);
        let count = rows.len() as f64;
        // Exact sums so that pooling a subdivided grid returns it bit-for-bit.
        features.extend((0..c).map(|ch| exact_sum(rows.iter().map(|&r| grid.feature(r)[ch])) / count));
    }
    SparseGrid::new(res / 2, c, coords, features)
}

/// Copies each coarse feature to the fine voxels of `fine_structure` it covers.
pub fn nearest_unpool2(coarse: &SparseGrid, fine_structure: &SparseGrid) -> Result<SparseGrid> {
    if fine_structure.resolution() != coarse.resolution() * 2 {
        return Err(SlatError::Resolution(format!(
            "fine resolution {} is not twice coarse {}",
            fine_structure.resolution(),
            coarse.resolution()
        )));
    }
    let c = coarse.channels();
    let mut features = Vec::with_capacity(fine_structure.len() * c);
    for &fine in fine_structure.coords() {
        let parent = coarse.index_of(fine.parent()).ok_or_else(|| {
            SlatError::StructureMismatch(format!("parent of {fine:?} is not active"))
        })?;
        features.extend_from_slice(coarse.feature(parent));
    }
    SparseGrid::new(fine_structure.resolution(), c, fine_structure.coords().to_vec(), features)
}

/// Submanifold 3x3x3 convolution: the active set is preserved and inactive
/// neighbors contribute zero.
pub fn sparse_conv3(grid: &SparseGrid, kernel: &ConvKernel) -> Result<SparseGrid> {
    if kernel.cin != grid.channels() {
        return Err(SlatError::Shape(format!(
            "kernel expects {} input channels, grid has {}",
            kernel.cin,
            grid.channels()
        )));
    }
    let res = grid.resolution();
    let (cin, cout) = (kernel.cin, kernel.cout);
    let rows: Vec<Vec<f64>> = grid
        .coords()
        .par_iter()
        .map(|&coord| {
            let mut neighbors = [None; 27];
            for (tap, slot) in neighbors.iter_mut().enumerate() {
                *slot = coord
                    .offset(ConvKernel::tap_offset(tap), res)
                    .and_then(|n| grid.index_of(n));
            }
            let mut out = kernel.bias.clone();
            for (o, acc) in out.iter_mut().enumerate() {
                for (tap, n) in neighbors.iter().enumerate() {
                    let Some(n) = *n else { continue };
                    let f = grid.feature(n);
                    for (i, &fv) in f.iter().enumerate() {
                        *acc += kernel.weights[(tap * cin + i) * cout + o] * fv;
                    }
                }
            }
            out
        })
        .collect();
    let features = rows.into_iter().flatten().collect();
    grid.with_features(cout, features)
}

/// Splits every active voxel into its 8 children, copying the feature row.
pub fn subdivide(grid: &SparseGrid) -> Result<SparseGrid> {
    let c = grid.channels();
    let mut pairs: Vec<(VoxelCoord, usize)> = Vec::with_capacity(grid.len() * 8);
    for (i, p) in grid.coords().iter().enumerate() {
        for k in 0..8u32 {
            let child = VoxelCoord::new(2 * p.x + (k >> 2), 2 * p.y + ((k >> 1) & 1), 2 * p.z + (k & 1));
            pairs.push((child, i));
        }
    }
    pairs.sort_unstable_by_key(|&(c, _)| c);
    let mut features = Vec::with_capacity(pairs.len() * c);
    for &(_, i) in &pairs {
        features.extend_from_slice(grid.feature(i));
    }
    let coords = pairs.into_iter().map(|(c, _)| c).collect();
    SparseGrid::new(grid.resolution() * 2, c, coords, features)
}
