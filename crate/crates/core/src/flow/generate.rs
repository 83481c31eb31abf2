//! Two-stage generation (structure, then per-voxel latents) and the two
//! editing modes built on it.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::field::{LayoutVelocityModel, OnLayout, VelocityModel};
use super::sampler::{gaussian_noise, ode_sample, repaint_sample, EditMask, SamplerConfig};
use crate::error::{Result, SlatError};
use crate::nn::{pixel_shuffle3d, ConvUnet3d, Mat};
use crate::sparse::{DenseBinaryGrid, SparseGrid, VoxelCoord};
use crate::tensor::DenseTensor;

/// Turns a stage-one latent into per-voxel occupancy logits `[n,n,n,1]`.
pub trait StructureDecoder: Sync {
    fn latent_dims(&self) -> Vec<usize>;
    fn output_resolution(&self) -> u32;
    fn decode_logits(&self, latent: &DenseTensor) -> Result<DenseTensor>;
}

impl StructureDecoder for ConvUnet3d {
    fn latent_dims(&self) -> Vec<usize> {
        self.config.latent_dims()
    }

    fn output_resolution(&self) -> u32 {
        self.config.resolution as u32
    }

    fn decode_logits(&self, latent: &DenseTensor) -> Result<DenseTensor> {
        self.decode(latent)
    }
}

/// Parameter-free decoder: a 3D pixel shuffle of an 8-channel latent, so
/// each latent cell owns exactly one 2^3 block of output voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelShuffleDecoder {
    pub resolution: u32,
}

impl StructureDecoder for PixelShuffleDecoder {
    fn latent_dims(&self) -> Vec<usize> {
        let n = self.resolution as usize / 2;
        vec![n, n, n, 8]
    }

    fn output_resolution(&self) -> u32 {
        self.resolution
    }

    fn decode_logits(&self, latent: &DenseTensor) -> Result<DenseTensor> {
        if latent.dims != self.latent_dims() {
            return Err(SlatError::Shape(format!("expected latent {:?}, got {:?}", self.latent_dims(), latent.dims)));
        }
        pixel_shuffle3d(latent)
    }
}

/// Active voxels where the logit is strictly positive.
pub fn threshold_structure(logits: &DenseTensor) -> Result<DenseBinaryGrid> {
    let n = logits.dims.first().copied().unwrap_or(0);
    if logits.dims != [n, n, n, 1] {
        return Err(SlatError::Shape(format!("expected [n,n,n,1] logits, got {:?}", logits.dims)));
    }
    DenseBinaryGrid::from_values(n as u32, logits.data.iter().map(|&v| v > 0.0).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Stage-one latent the structure was decoded from.
    pub structure_latent: DenseTensor,
    pub latents: SparseGrid,
}

fn seeds(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    (ChaCha8Rng::seed_from_u64(seed), ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15))
}

fn sample_latents(
    latent_model: &(impl LayoutVelocityModel + ?Sized),
    structure: &DenseBinaryGrid,
    cond: Option<&Mat>,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SparseGrid> {
    let layout = crate::sparse::from_dense(structure, 0.0)?;
    if layout.is_empty() {
        return Err(SlatError::Empty("stage one produced no active voxels".into()));
    }
    let c = latent_model.channels();
    let noise = gaussian_noise(layout.len() * c, rng);
    let bound = OnLayout { model: latent_model, structure: &layout };
    let x = ode_sample(&bound, &noise, cond, cfg)?;
    layout.with_features(c, x)
}

/// Stage one samples the dense structure latent and decodes it to
/// occupancy (logit > 0); stage two samples per-voxel latents on it.
pub fn two_stage_generate(
    structure_model: &(impl VelocityModel + ?Sized),
    decoder: &(impl StructureDecoder + ?Sized),
    latent_model: &(impl LayoutVelocityModel + ?Sized),
    cond: Option<&Mat>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Generated> {
    let (mut r1, mut r2) = seeds(seed);
    let dims = decoder.latent_dims();
    let noise = gaussian_noise(dims.iter().product(), &mut r1);
    let s = DenseTensor::new(dims, ode_sample(structure_model, &noise, cond, cfg)?)?;
    let occ = threshold_structure(&decoder.decode_logits(&s)?)?;
    let latents = sample_latents(latent_model, &occ, cond, cfg, &mut r2)?;
    Ok(Generated { structure_latent: s, latents })
}

/// Keeps the structure and resamples stage two with a new seed.
pub fn variation(
    latent_model: &(impl LayoutVelocityModel + ?Sized),
    latents: &SparseGrid,
    cond: Option<&Mat>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SparseGrid> {
    let (_, mut r2) = seeds(seed);
    sample_latents(latent_model, &crate::sparse::to_dense(latents), cond, cfg, &mut r2)
}

/// Half-open voxel box `[lo, hi)` in the coordinates of the latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VoxelBox {
    pub lo: [u32; 3],
    pub hi: [u32; 3],
}

impl VoxelBox {
    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.hi[i] <= self.lo[i])
    }

    pub fn contains(&self, p: VoxelCoord) -> bool {
        let a = p.as_array();
        (0..3).all(|i| a[i] >= self.lo[i] && a[i] < self.hi[i])
    }

    fn intersects_block(&self, lo: [u32; 3], side: u32) -> bool {
        (0..3).all(|i| lo[i] < self.hi[i] && lo[i] + side > self.lo[i])
    }
}

/// Region editing: stage-one latent cells whose footprint meets `bbox` are
/// regenerated with masked sampling, the structure is rebuilt from the
/// new occupancy inside those footprints and the old one elsewhere, and
/// stage two regenerates the voxels inside the footprints while keeping
/// every other latent bit-identical.
#[allow(clippy::too_many_arguments)]
pub fn repaint_edit(
    structure_model: &(impl VelocityModel + ?Sized),
    decoder: &(impl StructureDecoder + ?Sized),
    latent_model: &(impl LayoutVelocityModel + ?Sized),
    previous: &Generated,
    bbox: VoxelBox,
    cond: Option<&Mat>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Generated> {
    if bbox.is_empty() {
        return Ok(previous.clone());
    }
    let res = decoder.output_resolution();
    if previous.latents.resolution() != res || bbox.hi.iter().any(|&h| h > res) {
        return Err(SlatError::OutOfRange(format!("edit box {bbox:?} does not fit a {res}^3 grid")));
    }
    let dims = decoder.latent_dims();
    if previous.structure_latent.dims != dims {
        return Err(SlatError::Shape("stage-one latent does not match the decoder".into()));
    }
    let n = dims[0];
    let ch = dims[3];
    let side = res / n as u32;
    let mut cell_mask = vec![false; n * n * n];
    let mut mask = Vec::with_capacity(n * n * n * ch);
    for (i, m) in cell_mask.iter_mut().enumerate() {
        let c = VoxelCoord::from_linear(i, n as u32);
        *m = bbox.intersects_block(c.as_array().map(|v| v * side), side);
        mask.extend(std::iter::repeat_n(*m, ch));
    }
    let (mut r1, mut r2) = seeds(seed);
    let s = repaint_sample(structure_model, &previous.structure_latent.data, &EditMask(mask), cond, cfg, rand::Rng::random(&mut r1))?;
    let s = DenseTensor::new(dims, s)?;
    let fresh = threshold_structure(&decoder.decode_logits(&s)?)?;
    let old = crate::sparse::to_dense(&previous.latents);
    let in_region = |p: VoxelCoord| cell_mask[VoxelCoord::new(p.x / side, p.y / side, p.z / side).linear_index(n as u32)];
    let mut occ = DenseBinaryGrid::new(res);
    for i in 0..(res as usize).pow(3) {
        let p = VoxelCoord::from_linear(i, res);
        occ.set(p, if in_region(p) { fresh.get(p) } else { old.get(p) });
    }
    let layout = crate::sparse::from_dense(&occ, 0.0)?;
    if layout.is_empty() {
        return Err(SlatError::Empty("edit removed every active voxel".into()));
    }
    let c = latent_model.channels();
    if previous.latents.channels() != c {
        return Err(SlatError::Shape("latent model width differs from the edited latents".into()));
    }
    let mut known = vec![0.0; layout.len() * c];
    let mut vmask = Vec::with_capacity(layout.len() * c);
    for (i, &p) in layout.coords().iter().enumerate() {
        let keep = if in_region(p) { None } else { previous.latents.index_of(p) };
        if let Some(j) = keep {
            known[i * c..(i + 1) * c].copy_from_slice(previous.latents.feature(j));
        }
        vmask.extend(std::iter::repeat_n(keep.is_none(), c));
    }
    let bound = OnLayout { model: latent_model, structure: &layout };
    let x = repaint_sample(&bound, &known, &EditMask(vmask), cond, cfg, rand::Rng::random(&mut r2))?;
    Ok(Generated { structure_latent: s, latents: layout.with_features(c, x)? })
}

/// Number of 6-connected components of the occupied cells.
pub fn connected_components(g: &DenseBinaryGrid) -> usize {
    let n = g.resolution();
    let mut seen = vec![false; g.values().len()];
    let mut count = 0;
    for start in 0..seen.len() {
        if seen[start] || !g.values()[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let p = VoxelCoord::from_linear(i, n);
            for d in [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                if let Some(q) = p.offset(d, n) {
                    let j = q.linear_index(n);
                    if g.values()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

/// Occupied count over the volume of the occupied bounding box; 1 for a
/// solid box, 0 for an empty grid.
pub fn box_fill_ratio(g: &DenseBinaryGrid) -> f64 {
    let n = g.resolution();
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    let mut count = 0usize;
    for (i, &b) in g.values().iter().enumerate() {
        if b {
            count += 1;
            let a = VoxelCoord::from_linear(i, n).as_array();
            for k in 0..3 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(a[k] + 1);
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    count as f64 / (0..3).map(|k| (hi[k] - lo[k]) as f64).product::<f64>()
}

/// A solid axis-aligned box: one component filling its bounding box.
pub fn is_box(g: &DenseBinaryGrid) -> bool {
    connected_components(g) == 1 && box_fill_ratio(g) == 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::datasets::{box_family, occupancy_latent};
    use crate::flow::field::{ConstantField, GaussianField, IgnoreLayout};

    #[test]
    fn box_checks() {
        for b in box_family(4, 1).iter().step_by(37) {
            assert!(is_box(b));
        }
        let mut g = DenseBinaryGrid::new(4);
        g.set(VoxelCoord::new(0, 0, 0), true);
        g.set(VoxelCoord::new(2, 0, 0), true);
        assert_eq!(connected_components(&g), 2);
        assert!(!is_box(&g));
        g.set(VoxelCoord::new(1, 0, 0), true);
        g.set(VoxelCoord::new(1, 1, 0), true);
        assert_eq!(connected_components(&g), 1);
        assert!(box_fill_ratio(&g) < 1.0);
    }

    #[test]
    fn pipeline_runs_on_the_collapsed_structure() {
        let target = &box_family(4, 2)[17];
        let z = occupancy_latent(target).unwrap();
        let s_field = GaussianField { mean: z.data.clone(), std: 1e-3 };
        let zero = ConstantField { value: vec![0.0] };
        let latent_model = IgnoreLayout { model: &zero, channels: 2 };
        let dec = PixelShuffleDecoder { resolution: 4 };
        let cfg = SamplerConfig { steps: 20, ..Default::default() };
        let g = two_stage_generate(&s_field, &dec, &latent_model, None, &cfg, 3).unwrap();
        assert_eq!(crate::sparse::to_dense(&g.latents), *target);
        assert_eq!(g, two_stage_generate(&s_field, &dec, &latent_model, None, &cfg, 3).unwrap());

        let empty = GaussianField { mean: vec![-1.0; 64], std: 1e-3 };
        assert!(matches!(two_stage_generate(&empty, &dec, &latent_model, None, &cfg, 3), Err(SlatError::Empty(_))));
    }

    #[test]
    fn edits_preserve_what_they_should() {
        let target = &box_family(4, 4)[0];
        let z = occupancy_latent(target).unwrap();
        let s_field = GaussianField { mean: z.data.clone(), std: 0.5 };
        let noise = ConstantField { value: vec![0.3] };
        let lm = IgnoreLayout { model: &noise, channels: 2 };
        let dec = PixelShuffleDecoder { resolution: 4 };
        let cfg = SamplerConfig { steps: 10, ..Default::default() };
        let g = two_stage_generate(&s_field, &dec, &lm, None, &cfg, 1).unwrap();

        let same = repaint_edit(&s_field, &dec, &lm, &g, VoxelBox { lo: [1, 1, 1], hi: [1, 3, 3] }, None, &cfg, 5).unwrap();
        assert_eq!(same, g);

        let octant = VoxelBox { lo: [0, 0, 0], hi: [2, 2, 2] };
        let e = repaint_edit(&s_field, &dec, &lm, &g, octant, None, &cfg, 5).unwrap();
        for (i, &p) in g.latents.coords().iter().enumerate() {
            if !octant.contains(p) {
                let j = e.latents.index_of(p).expect("voxel kept");
                assert_eq!(e.latents.feature(j), g.latents.feature(i));
            }
        }
        for &p in e.latents.coords() {
            assert!(octant.contains(p) || g.latents.index_of(p).is_some());
        }
        assert!(repaint_edit(&s_field, &dec, &lm, &g, VoxelBox { lo: [0, 0, 0], hi: [5, 1, 1] }, None, &cfg, 5).is_err());
    }
}
