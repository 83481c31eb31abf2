//! FlexiCubes parameters on the sparse mesh grid and their dense view.

use std::collections::BTreeMap;

use rand::Rng;

use super::trimesh::normalize;
use crate::defaults::INACTIVE_SDF;
use crate::error::{Result, SlatError};
use crate::nn::{silu, Linear, WeightArchive};
use crate::numeric::{exact_sum, sigmoid, softplus};
use crate::sparse::{sparse_conv3, subdivide, ConvKernel, SparseGrid, VoxelCoord};

/// Flexible weights: alpha 8, beta 12, gamma 1, delta 8x3.
pub const FLEXI_WEIGHTS: usize = 45;
/// Per-voxel head width: weights, corner SDF 8, colour 8x3, normal 8x3.
pub const FLEXI_CHANNELS: usize = FLEXI_WEIGHTS + 8 + 24 + 24;

pub const ALPHA: usize = 0;
pub const BETA: usize = 8;
pub const GAMMA: usize = 20;
pub const DELTA: usize = 21;
pub const SDF: usize = 45;
pub const COLOR: usize = 53;
pub const NORMAL: usize = 77;

/// Corner `k` of a cell sits at offset `(k >> 2 & 1, k >> 1 & 1, k & 1)`.
pub fn corner_offset(k: usize) -> [u32; 3] {
    [(k >> 2) as u32 & 1, (k >> 1) as u32 & 1, k as u32 & 1]
}

/// The 12 cell edges as corner pairs: four along x, four along y, four along z.
pub const CELL_EDGES: [(usize, usize); 12] = [
    (0, 4), (1, 5), (2, 6), (3, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 1), (2, 3), (4, 5), (6, 7),
];

/// Maps raw head outputs to their constrained ranges: alpha, beta, gamma
/// through softplus, delta through `0.5 * tanh` (in cells), SDF raw,
/// colours through sigmoid, normals normalized per corner.
pub fn activate_flexi(raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    for v in &mut out[ALPHA..DELTA] {
        *v = softplus(*v);
    }
    for v in &mut out[DELTA..SDF] {
        *v = 0.5 * v.tanh();
    }
    for v in &mut out[COLOR..NORMAL] {
        *v = sigmoid(*v);
    }
    for k in 0..8 {
        let n = normalize([out[NORMAL + 3 * k], out[NORMAL + 3 * k + 1], out[NORMAL + 3 * k + 2]]);
        out[NORMAL + 3 * k..NORMAL + 3 * k + 3].copy_from_slice(&n);
    }
    out
}

/// Sparse SDF grid carrying activated FlexiCubes parameters per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexiGrid {
    pub grid: SparseGrid,
}

impl FlexiGrid {
    pub fn new(grid: SparseGrid) -> Result<Self> {
        if grid.channels() != FLEXI_CHANNELS {
            return Err(SlatError::Shape(format!("flexi grid needs {FLEXI_CHANNELS} channels, got {}", grid.channels())));
        }
        Ok(Self { grid })
    }

    pub fn resolution(&self) -> u32 {
        self.grid.resolution()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.grid.len() {
            let f = self.grid.feature(i);
            let bad = |w: &str| Err(SlatError::OutOfRange(format!("voxel {i}: {w}")));
            if f[ALPHA..DELTA].iter().any(|&v| !(v >= 0.0)) {
                return bad("negative flexible weight");
            }
            if f[DELTA..SDF].iter().any(|v| v.abs() > 0.5) {
                return bad("deformation beyond half a cell");
            }
            if f[COLOR..NORMAL].iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("colour outside [0, 1]");
            }
            for k in 0..8 {
                let n = &f[NORMAL + 3 * k..NORMAL + 3 * k + 3];
                let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len != 0.0 && (len - 1.0).abs() > 1e-9 {
                    return bad("normal not unit length");
                }
            }
        }
        Ok(())
    }
}

/// Sparse residual block: `x + conv2(silu(conv1(silu(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseResBlock {
    pub conv1: ConvKernel,
    pub conv2: ConvKernel,
}

impl SparseResBlock {
    pub fn forward(&self, x: &SparseGrid) -> Result<SparseGrid> {
        let act = |g: &SparseGrid| g.with_features(g.channels(), g.features().iter().map(|&v| silu(v)).collect());
        let h = sparse_conv3(&act(&sparse_conv3(&act(x)?, &self.conv1)?)?, &self.conv2)?;
        x.with_features(x.channels(), x.features().iter().zip(h.features()).map(|(a, b)| a + b).collect())
    }
}

pub const MESH_DECODER_KIND: &str = "mesh-decoder";

/// Two subdivide-and-convolve upsampling stages followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshDecoder {
    pub stages: Vec<SparseResBlock>,
    pub head: Linear,
}

impl MeshDecoder {
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        let s = (1.0 / (27 * channels) as f64).sqrt();
        let mut kernel = || {
            let mut k = ConvKernel::zeros(channels, channels);
            k.weights.iter_mut().for_each(|w| *w = rng.random_range(-s..s));
            k
        };
        let stages = (0..2).map(|_| SparseResBlock { conv1: kernel(), conv2: kernel() }).collect();
        Self { stages, head: Linear::init(channels, FLEXI_CHANNELS, rng) }
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new(MESH_DECODER_KIND, serde_json::json!({ "stages": self.stages.len() }));
        for (i, s) in self.stages.iter().enumerate() {
            a.put_conv(&format!("blk{i}.conv1"), &s.conv1);
            a.put_conv(&format!("blk{i}.conv2"), &s.conv2);
        }
        a.put_linear("head", &self.head);
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        a.expect_kind(MESH_DECODER_KIND)?;
        let n = a.meta.get("stages").and_then(|v| v.as_u64()).ok_or_else(|| SlatError::Format("missing 'stages'".into()))?;
        let stages = (0..n as usize)
            .map(|i| Ok(SparseResBlock { conv1: a.get_conv(&format!("blk{i}.conv1"))?, conv2: a.get_conv(&format!("blk{i}.conv2"))? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, head: a.get_linear("head")? })
    }
}

/// Upsamples latents 4x (64 -> 256 for the default grid) and emits
/// activated FlexiCubes parameters per fine voxel.
pub fn decode_mesh_params(latents: &SparseGrid, dec: &MeshDecoder) -> Result<FlexiGrid> {
    if latents.channels() != dec.head.in_dim {
        return Err(SlatError::Shape(format!("mesh decoder expects {} channels, got {}", dec.head.in_dim, latents.channels())));
    }
    let mut h = latents.clone();
    for st in &dec.stages {
        h = st.forward(&subdivide(&h)?)?;
    }
    let feats: Vec<f64> = (0..h.len()).flat_map(|i| activate_flexi(&dec.head.apply(h.feature(i)))).collect();
    FlexiGrid::new(h.with_features(FLEXI_CHANNELS, feats)?)
}

/// Averaged attributes of one grid vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexData {
    pub sdf: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
    /// Corner deformation in cell units.
    pub deform: [f64; 3],
}

impl VertexData {
    pub const INACTIVE: Self = Self { sdf: INACTIVE_SDF, color: [0.0; 3], normal: [0.0; 3], deform: [0.0; 3] };
}

/// Per-cell flexible weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights {
    pub alpha: [f64; 8],
    pub beta: [f64; 12],
    pub gamma: f64,
}

impl CellWeights {
    pub const NEUTRAL: Self = Self { alpha: [1.0; 8], beta: [1.0; 12], gamma: 1.0 };
}

/// Dense view of an SDF grid with `resolution` cells per side and
/// `resolution + 1` vertices per side.
pub trait SdfVolume: Sync {
    fn resolution(&self) -> u32;
    fn vertex(&self, v: [u32; 3]) -> VertexData;
    fn cell(&self, c: [u32; 3]) -> CellWeights;
    /// Vertices with negative SDF (inside), in lexicographic order.
    fn negative_vertices(&self) -> Vec<[u32; 3]>;
}

/// Dense view of a [`FlexiGrid`]: inactive cells are neutral and vertices
/// touched by no active voxel report SDF 1; shared vertices average the
/// predictions of their voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexiAccessor {
    pub resolution: u32,
    pub vertices: BTreeMap<[u32; 3], VertexData>,
    /// Summed per-attribute variance across contributing voxels.
    pub variance: BTreeMap<[u32; 3], f64>,
    cells: SparseGrid,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = exact_sum(xs.iter().copied()) / n;
    (m, exact_sum(xs.iter().map(|x| (x - m) * (x - m))) / n)
}

pub fn densify(grid: &FlexiGrid) -> FlexiAccessor {
    let g = &grid.grid;
    // Attribute rows of every voxel corner, grouped by vertex.
    let mut contrib: BTreeMap<[u32; 3], Vec<[f64; 10]>> = BTreeMap::new();
    for (i, &c) in g.coords().iter().enumerate() {
        let f = g.feature(i);
        for k in 0..8 {
            let o = corner_offset(k);
            let v = [c.x + o[0], c.y + o[1], c.z + o[2]];
            let mut row = [0.0; 10];
            row[0] = f[SDF + k];
            row[1..4].copy_from_slice(&f[COLOR + 3 * k..COLOR + 3 * k + 3]);
            row[4..7].copy_from_slice(&f[NORMAL + 3 * k..NORMAL + 3 * k + 3]);
            row[7..10].copy_from_slice(&f[DELTA + 3 * k..DELTA + 3 * k + 3]);
            contrib.entry(v).or_default().push(row);
        }
    }
    let mut vertices = BTreeMap::new();
    let mut variance = BTreeMap::new();
    for (v, rows) in contrib {
        let mut mean = [0.0; 10];
        let mut var = 0.0;
        for (a, m) in mean.iter_mut().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            let (mu, s2) = mean_var(&col);
            *m = mu;
            if a < 7 {
                var += s2;
            }
        }
        vertices.insert(
            v,
            VertexData {
                sdf: mean[0],
                color: [mean[1], mean[2], mean[3]],
                normal: [mean[4], mean[5], mean[6]],
                deform: [mean[7], mean[8], mean[9]],
            },
        );
        variance.insert(v, var);
    }
    FlexiAccessor { resolution: grid.resolution(), vertices, variance, cells: g.clone() }
}

impl SdfVolume for FlexiAccessor {
    fn resolution(&self) -> u32 {
        self.resolution
    }

    fn vertex(&self, v: [u32; 3]) -> VertexData {
        self.vertices.get(&v).copied().unwrap_or(VertexData::INACTIVE)
    }

    fn cell(&self, c: [u32; 3]) -> CellWeights {
        match self.cells.index_of(VoxelCoord::new(c[0], c[1], c[2])) {
            Some(i) => {
                let f = self.cells.feature(i);
                let mut w = CellWeights::NEUTRAL;
                w.alpha.copy_from_slice(&f[ALPHA..BETA]);
                w.beta.copy_from_slice(&f[BETA..GAMMA]);
                w.gamma = f[GAMMA];
                w
            }
            None => CellWeights::NEUTRAL,
        }
    }

    fn negative_vertices(&self) -> Vec<[u32; 3]> {
        self.vertices.iter().filter(|(_, d)| d.sdf < 0.0).map(|(&v, _)| v).collect()
    }
}

/// Dense vertex SDF with neutral weights and no attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSdf {
    pub resolution: u32,
    /// `(resolution + 1)^3` values, x slowest.
    pub values: Vec<f64>,
}

impl DenseSdf {
    /// World position of grid vertex `v` in the `(-0.5, 0.5)^3` cube.
    pub fn vertex_position(v: [u32; 3], resolution: u32) -> [f64; 3] {
        v.map(|i| i as f64 / resolution as f64 - 0.5)
    }

    pub fn from_fn(resolution: u32, f: impl Fn([f64; 3]) -> f64) -> Self {
        let m = resolution + 1;
        let mut values = Vec::with_capacity((m as usize).pow(3));
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    values.push(f(Self::vertex_position([x, y, z], resolution)));
                }
            }
        }
        Self { resolution, values }
    }

    fn index(&self, v: [u32; 3]) -> usize {
        let m = (self.resolution + 1) as usize;
        (v[0] as usize * m + v[1] as usize) * m + v[2] as usize
    }
}

impl SdfVolume for DenseSdf {
    fn resolution(&self) -> u32 {
        self.resolution
    }

    fn vertex(&self, v: [u32; 3]) -> VertexData {
        VertexData { sdf: self.values[self.index(v)], ..VertexData::INACTIVE }
    }

    fn cell(&self, _: [u32; 3]) -> CellWeights {
        CellWeights::NEUTRAL
    }

    fn negative_vertices(&self) -> Vec<[u32; 3]> {
        let m = self.resolution + 1;
        let mut out = Vec::new();
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    if self.values[self.index([x, y, z])] < 0.0 {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flexi_with_sdf(cells: &[(VoxelCoord, f64)], res: u32) -> FlexiGrid {
        let coords = cells.iter().map(|c| c.0).collect();
        let mut feats = Vec::new();
        for &(_, d) in cells {
            let mut f = activate_flexi(&[0.0; FLEXI_CHANNELS]);
            f[SDF..COLOR].fill(d);
            feats.extend(f);
        }
        FlexiGrid::new(SparseGrid::from_unsorted(res, FLEXI_CHANNELS, coords, feats).unwrap()).unwrap()
    }

    #[test]
    fn shared_vertex_is_averaged() {
        let g = flexi_with_sdf(&[(VoxelCoord::new(0, 0, 0), 0.2), (VoxelCoord::new(1, 0, 0), 0.4)], 4);
        let acc = densify(&g);
        assert!((acc.vertex([1, 0, 0]).sdf - 0.3).abs() < 1e-15);
        assert_eq!(acc.vertex([0, 0, 0]).sdf, 0.2);
        assert_eq!(acc.vertex([3, 3, 3]).sdf, INACTIVE_SDF);
        assert_eq!(acc.cell([3, 3, 3]), CellWeights::NEUTRAL);
        assert!(acc.variance[&[1, 0, 0]] > 0.0);
        assert_eq!(acc.variance[&[0, 0, 0]], 0.0);
    }

    #[test]
    fn empty_grid_is_constant() {
        let g = FlexiGrid::new(SparseGrid::empty(8, FLEXI_CHANNELS).unwrap()).unwrap();
        let acc = densify(&g);
        assert!(acc.negative_vertices().is_empty());
        assert_eq!(acc.vertex([4, 4, 4]).sdf, 1.0);
    }

    #[test]
    fn decoder_grows_structure_64x() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = MeshDecoder::init(4, &mut rng);
        let coords = vec![VoxelCoord::new(1, 2, 3), VoxelCoord::new(5, 5, 5)];
        let lat = SparseGrid::new(8, 4, coords, (0..8).map(|v| v as f64 * 0.1).collect()).unwrap();
        let fg = decode_mesh_params(&lat, &dec).unwrap();
        assert_eq!(fg.grid.len(), 128);
        assert_eq!(fg.resolution(), 32);
        fg.check_invariants().unwrap();

        let zero = MeshDecoder { head: Linear::zeros(4, FLEXI_CHANNELS), ..dec };
        let fg = decode_mesh_params(&lat, &zero).unwrap();
        assert!((0..fg.grid.len()).all(|i| fg.grid.feature(i)[SDF..COLOR].iter().all(|&d| d == 0.0)));
        assert!(densify(&fg).negative_vertices().is_empty());
    }
}
