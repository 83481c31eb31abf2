//! Per-voxel CP-decomposed radiance volumes.

use rand::Rng;

use crate::defaults::{CP_CHANNELS, CP_RANK, CP_SIDE};
use crate::error::{Result, SlatError};
use crate::nn::{Linear, WeightArchive};
use crate::sparse::{SparseGrid, VoxelCoord};

/// Channels of one voxel's factors: `v_x, v_y, v_z` (rank x side each)
/// followed by `v_c` (rank x 4).
pub const CP_CELL_CHANNELS: usize = CP_RANK * CP_SIDE * 3 + CP_RANK * CP_CHANNELS;

/// Factor slices of one cell, each row-major over rank.
#[derive(Debug, Clone, Copy)]
pub struct CpFactors<'a> {
    pub vx: &'a [f64],
    pub vy: &'a [f64],
    pub vz: &'a [f64],
    pub vc: &'a [f64],
}

impl<'a> CpFactors<'a> {
    pub fn from_channels(row: &'a [f64]) -> Result<Self> {
        if row.len() != CP_CELL_CHANNELS {
            return Err(SlatError::Shape(format!("CP cell needs {CP_CELL_CHANNELS} channels, got {}", row.len())));
        }
        let s = CP_RANK * CP_SIDE;
        Ok(Self { vx: &row[..s], vy: &row[s..2 * s], vz: &row[2 * s..3 * s], vc: &row[3 * s..] })
    }
}

/// Index of texel `(x, y, z)` channel `c` in a reconstructed cell.
pub fn cell_index(x: usize, y: usize, z: usize, c: usize) -> usize {
    ((x * CP_SIDE + y) * CP_SIDE + z) * CP_CHANNELS + c
}

/// `V[x,y,z,c] = sum_r vx[r,x] vy[r,y] vz[r,z] vc[r,c]`.
pub fn reconstruct_cp_cell(f: &CpFactors) -> Vec<f64> {
    let (s, ch) = (CP_SIDE, CP_CHANNELS);
    let mut v = vec![0.0; s * s * s * ch];
    for r in 0..CP_RANK {
        for x in 0..s {
            let a = f.vx[r * s + x];
            for y in 0..s {
                let ab = a * f.vy[r * s + y];
                for z in 0..s {
                    let abc = ab * f.vz[r * s + z];
                    for c in 0..ch {
                        v[cell_index(x, y, z, c)] += abc * f.vc[r * ch + c];
                    }
                }
            }
        }
    }
    v
}

/// Texel-space coordinate along one axis: texel centers sit at integers,
/// clamped to the cell so no value is borrowed from neighbouring cells.
/// Returns the lower texel and the interpolation weight of the upper one.
pub fn texel_lerp(local: f64) -> (usize, f64) {
    let u = (local * CP_SIDE as f64 - 0.5).clamp(0.0, (CP_SIDE - 1) as f64);
    let i0 = (u.floor() as usize).min(CP_SIDE - 2);
    (i0, u - i0 as f64)
}

/// Voxel containing a world point of the `(-0.5, 0.5)^3` cube and the
/// point's position inside it in `[0, 1)^3`.
pub fn locate(p: [f64; 3], resolution: u32) -> Option<(VoxelCoord, [f64; 3])> {
    if p.iter().any(|v| !(-0.5..0.5).contains(v)) {
        return None;
    }
    let n = resolution as f64;
    let g = p.map(|v| (v + 0.5) * n);
    let i = g.map(|v| (v.floor() as u32).min(resolution - 1));
    Some((VoxelCoord::new(i[0], i[1], i[2]), [0, 1, 2].map(|k| g[k] - i[k] as f64)))
}

pub const CP_HEAD_KIND: &str = "cp-head";

/// Linear head from latent channels to per-voxel CP factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CpHead {
    pub linear: Linear,
}

impl CpHead {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self { linear: Linear::init(channels, CP_CELL_CHANNELS, rng) }
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new(CP_HEAD_KIND, serde_json::json!({ "rank": CP_RANK, "side": CP_SIDE }));
        a.put_linear("head", &self.linear);
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        a.expect_kind(CP_HEAD_KIND)?;
        let linear = a.get_linear("head")?;
        if linear.out_dim != CP_CELL_CHANNELS {
            return Err(SlatError::Shape(format!("CP head emits {} channels", linear.out_dim)));
        }
        Ok(Self { linear })
    }
}

/// Per-voxel CP factors for every latent voxel.
pub fn decode_radiance(latents: &SparseGrid, head: &CpHead) -> Result<SparseGrid> {
    if latents.channels() != head.linear.in_dim {
        return Err(SlatError::Shape(format!("CP head expects {} channels, got {}", head.linear.in_dim, latents.channels())));
    }
    let feats = (0..latents.len()).flat_map(|i| head.linear.apply(latents.feature(i))).collect();
    latents.with_features(CP_CELL_CHANNELS, feats)
}

/// Radiance field assembled from per-voxel CP factors; each active voxel
/// owns an independent 8^3 x 4 volume, so the whole field is a virtual
/// `(8N)^3` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CpRadianceField {
    pub cells: SparseGrid,
}

pub fn assemble_field(cells: &SparseGrid) -> Result<CpRadianceField> {
    if cells.channels() != CP_CELL_CHANNELS {
        return Err(SlatError::Shape(format!("CP field needs {CP_CELL_CHANNELS} channels, got {}", cells.channels())));
    }
    Ok(CpRadianceField { cells: cells.clone() })
}

impl CpRadianceField {
    /// Virtual side of the assembled field.
    pub fn fine_resolution(&self) -> usize {
        self.cells.resolution() as usize * CP_SIDE
    }

    /// Trilinearly interpolated `(r, g, b, density)` before any activation;
    /// zero outside active voxels. Evaluated lazily: trilinear weights
    /// distribute over the rank-1 terms.
    pub fn sample_raw(&self, p: [f64; 3]) -> [f64; 4] {
        let Some((voxel, local)) = locate(p, self.cells.resolution()) else {
            return [0.0; 4];
        };
        let Some(i) = self.cells.index_of(voxel) else {
            return [0.0; 4];
        };
        let f = CpFactors::from_channels(self.cells.feature(i)).expect("channel count checked at assembly");
        let lx = texel_lerp(local[0]);
        let ly = texel_lerp(local[1]);
        let lz = texel_lerp(local[2]);
        let s = CP_SIDE;
        let lerp = |v: &[f64], r: usize, (i0, w): (usize, f64)| (1.0 - w) * v[r * s + i0] + w * v[r * s + i0 + 1];
        let mut out = [0.0; 4];
        for r in 0..CP_RANK {
            let k = lerp(f.vx, r, lx) * lerp(f.vy, r, ly) * lerp(f.vz, r, lz);
            for (c, o) in out.iter_mut().enumerate() {
                *o += k * f.vc[r * CP_CHANNELS + c];
            }
        }
        out
    }

    /// Colour clamped to `[0, 1]` and density clamped at zero.
    pub fn sample(&self, p: [f64; 3]) -> ([f64; 3], f64) {
        let v = self.sample_raw(p);
        ([v[0].clamp(0.0, 1.0), v[1].clamp(0.0, 1.0), v[2].clamp(0.0, 1.0)], v[3].max(0.0))
    }
}
