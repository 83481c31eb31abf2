//! Sparse voxel grids.
//!
//! A [`SparseGrid`] stores the active cells of an `N^3` grid together with a
//! fixed-width feature row per cell. Coordinates are kept sorted
//! lexicographically by `(x, y, z)`, which doubles as the token order used
//! when a grid is serialized for the transformers.

mod dice;
mod io;
mod ops;

pub use dice::{dice_loss, dice_loss_grad, DICE_EPS};
pub use io::{SLAT_MAGIC, SLAT_VERSION};
pub use ops::{avg_pool2, nearest_unpool2, sparse_conv3, subdivide, ConvKernel};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlatError};

/// Largest supported grid side; keeps coordinates within 16 bits on disk.
pub const MAX_RESOLUTION: u32 = 1024;

/// Integer cell index. Ordering is lexicographic on `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl VoxelCoord {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn in_range(&self, resolution: u32) -> bool {
        self.x < resolution && self.y < resolution && self.z < resolution
    }

    pub fn parent(&self) -> Self {
        Self::new(self.x / 2, self.y / 2, self.z / 2)
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }

    /// Neighbor at a signed offset, or `None` if it leaves `[0, resolution)^3`.
    pub fn offset(&self, d: [i32; 3], resolution: u32) -> Option<Self> {
        let step = |v: u32, dv: i32| -> Option<u32> {
            let n = v as i64 + dv as i64;
            (n >= 0 && n < resolution as i64).then_some(n as u32)
        };
        Some(Self::new(step(self.x, d[0])?, step(self.y, d[1])?, step(self.z, d[2])?))
    }

    /// Row-major linear index in a dense `N^3` array (x slowest).
    pub fn linear_index(&self, resolution: u32) -> usize {
        let n = resolution as usize;
        (self.x as usize * n + self.y as usize) * n + self.z as usize
    }

    pub fn from_linear(index: usize, resolution: u32) -> Self {
        let n = resolution as usize;
        Self::new((index / (n * n)) as u32, ((index / n) % n) as u32, (index % n) as u32)
    }
}

/// Dense occupancy grid (`O` in the structure stage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseBinaryGrid {
    resolution: u32,
    values: Vec<bool>,
}

impl DenseBinaryGrid {
    pub fn new(resolution: u32) -> Self {
        let n = resolution as usize;
        Self { resolution, values: vec![false; n * n * n] }
    }

    pub fn from_values(resolution: u32, values: Vec<bool>) -> Result<Self> {
        let n = resolution as usize;
        if values.len() != n * n * n {
            return Err(SlatError::Shape(format!(
                "expected {} cells for resolution {resolution}, got {}",
                n * n * n,
                values.len()
            )));
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, c: VoxelCoord) -> bool {
        self.values[c.linear_index(self.resolution)]
    }

    pub fn set(&mut self, c: VoxelCoord, v: bool) {
        let i = c.linear_index(self.resolution);
        self.values[i] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Active voxels of an `N^3` grid with one feature row per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    resolution: u32,
    channels: usize,
    coords: Vec<VoxelCoord>,
    features: Vec<f64>,
}

impl SparseGrid {
    /// Builds a grid from coordinates that are already strictly sorted.
    pub fn new(
        resolution: u32,
        channels: usize,
        coords: Vec<VoxelCoord>,
        features: Vec<f64>,
    ) -> Result<Self> {
        check_resolution(resolution)?;
        if features.len() != coords.len() * channels {
            return Err(SlatError::Shape(format!(
                "{} coords x {channels} channels needs {} features, got {}",
                coords.len(),
                coords.len() * channels,
                features.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| !c.in_range(resolution)) {
            return Err(SlatError::InvalidGrid(format!(
                "coordinate {c:?} outside resolution {resolution}"
            )));
        }
        if coords.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SlatError::InvalidGrid(
                "coordinates must be strictly increasing (sorted, no duplicates)".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(SlatError::NonFinite("sparse grid features".into()));
        }
        Ok(Self { resolution, channels, coords, features })
    }

    /// Sorts `(coord, row)` pairs before validating. Duplicates are rejected.
    pub fn from_unsorted(
        resolution: u32,
        channels: usize,
        coords: Vec<VoxelCoord>,
        features: Vec<f64>,
    ) -> Result<Self> {
        if features.len() != coords.len() * channels {
            return Err(SlatError::Shape("feature count does not match coords".into()));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&i| coords[i]);
        let sorted_coords = order.iter().map(|&i| coords[i]).collect();
        let mut sorted_features = Vec::with_capacity(features.len());
        for &i in &order {
            sorted_features.extend_from_slice(&features[i * channels..(i + 1) * channels]);
        }
        Self::new(resolution, channels, sorted_coords, sorted_features)
    }

    pub fn empty(resolution: u32, channels: usize) -> Result<Self> {
        Self::new(resolution, channels, Vec::new(), Vec::new())
    }

    /// Same active set with a zero feature matrix of the given width.
    pub fn zeros_like(&self, channels: usize) -> Self {
        Self {
            resolution: self.resolution,
            channels,
            coords: self.coords.clone(),
            features: vec![0.0; self.coords.len() * channels],
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn index_of(&self, c: VoxelCoord) -> Option<usize> {
        self.coords.binary_search(&c).ok()
    }

    /// Replaces the feature matrix, keeping the active set.
    pub fn with_features(&self, channels: usize, features: Vec<f64>) -> Result<Self> {
        Self::new(self.resolution, channels, self.coords.clone(), features)
    }

    pub fn into_parts(self) -> (u32, usize, Vec<VoxelCoord>, Vec<f64>) {
        (self.resolution, self.channels, self.coords, self.features)
    }
}

fn check_resolution(resolution: u32) -> Result<()> {
    if resolution == 0 || resolution > MAX_RESOLUTION {
        return Err(SlatError::Resolution(format!(
            "resolution {resolution} outside 1..={MAX_RESOLUTION}"
        )));
    }
    Ok(())
}

/// One active voxel per true cell, each carrying a single feature `fill`.
pub fn from_dense(grid: &DenseBinaryGrid, fill: f64) -> Result<SparseGrid> {
    let res = grid.resolution();
    // Linear order with x slowest is exactly the lexicographic coord order.
    let coords: Vec<VoxelCoord> = grid
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| VoxelCoord::from_linear(i, res))
        .collect();
    let features = vec![fill; coords.len()];
    SparseGrid::new(res, 1, coords, features)
}

pub fn to_dense(grid: &SparseGrid) -> DenseBinaryGrid {
    let mut dense = DenseBinaryGrid::new(grid.resolution());
    for &c in grid.coords() {
        dense.set(c, true);
    }
    dense
}

/// Serialized token sequence: one row per active voxel in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub resolution: u32,
    pub channels: usize,
    /// `L x C` row-major token matrix.
    pub tokens: Vec<f64>,
    /// `index[i]` is the voxel that produced token `i`.
    pub index: Vec<VoxelCoord>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.channels..(i + 1) * self.channels]
    }

    /// Inverse of the index map.
    pub fn token_of(&self, c: VoxelCoord) -> Option<usize> {
        self.index.binary_search(&c).ok()
    }
}

pub fn serialize(grid: &SparseGrid) -> TokenSequence {
    TokenSequence {
        resolution: grid.resolution(),
        channels: grid.channels(),
        tokens: grid.features().to_vec(),
        index: grid.coords().to_vec(),
    }
}

pub fn deserialize(seq: &TokenSequence) -> Result<SparseGrid> {
    SparseGrid::new(seq.resolution, seq.channels, seq.index.clone(), seq.tokens.clone())
}
