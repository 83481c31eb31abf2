use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defaults::MIN_GAUSSIAN_SCALE;
use crate::error::{Result, SlatError};
use crate::multiview::voxel_center;
use crate::nn::{Linear, WeightArchive};
use crate::numeric::{sigmoid, softplus};
use crate::sparse::{SparseGrid, VoxelCoord};

/// Raw values per Gaussian: offset 3, scale 3, opacity 1, rotation 4, color 3.
pub const RAW_GAUSSIAN: usize = 14;
/// Offsets are clamped before `tanh` so centers stay strictly inside the
/// anchor's one-voxel neighbourhood in floating point.
const OFFSET_CLAMP: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
    pub anchor: VoxelCoord,
}

/// Maps one raw 14-vector to a Gaussian anchored at `anchor`.
pub fn activate_gaussian(raw: &[f64], anchor: VoxelCoord, resolution: u32) -> Gaussian {
    let vc = voxel_center(anchor, resolution);
    let n = resolution as f64;
    let center = [0, 1, 2].map(|i| vc[i] + raw[i].clamp(-OFFSET_CLAMP, OFFSET_CLAMP).tanh() / n);
    let scale = [3, 4, 5].map(|i| MIN_GAUSSIAN_SCALE + softplus(raw[i]));
    let opacity = sigmoid(raw[6]);
    let q = [raw[7], raw[8], raw[9], raw[10]];
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rotation = if norm > 1e-12 && norm.is_finite() { q.map(|v| v / norm) } else { [1.0, 0.0, 0.0, 0.0] };
    let color = [11, 12, 13].map(|i| sigmoid(raw[i]));
    Gaussian { center, scale, rotation, opacity, color, anchor }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub resolution: u32,
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Checks the range guarantees of decoded Gaussians.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.resolution as f64;
        for (i, g) in self.gaussians.iter().enumerate() {
            let vc = voxel_center(g.anchor, self.resolution);
            let bad = |what: &str| Err(SlatError::OutOfRange(format!("gaussian {i}: {what}")));
            if (0..3).any(|k| (g.center[k] - vc[k]).abs() >= 1.0 / n) {
                return bad("center leaves the anchor neighbourhood");
            }
            if g.scale.iter().any(|&s| !(s >= MIN_GAUSSIAN_SCALE)) {
                return bad("scale below the floor");
            }
            let qn = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > 1e-6 {
                return bad("rotation is not a unit quaternion");
            }
            if !(0.0..=1.0).contains(&g.opacity) || g.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad("opacity or color outside [0, 1]");
            }
        }
        Ok(())
    }
}

pub const GS_HEAD_KIND: &str = "gaussian-head";

/// Linear head emitting `K * 14` raw values per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub k: usize,
    pub linear: Linear,
}

impl GaussianHead {
    pub fn new(k: usize, linear: Linear) -> Result<Self> {
        if k == 0 || linear.out_dim != k * RAW_GAUSSIAN {
            return Err(SlatError::Shape(format!("head emits {} values, need {k} x {RAW_GAUSSIAN}", linear.out_dim)));
        }
        Ok(Self { k, linear })
    }

    pub fn init(channels: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(k, Linear::init(channels, k * RAW_GAUSSIAN, rng))
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new(GS_HEAD_KIND, serde_json::json!({ "k": self.k }));
        a.put_linear("head", &self.linear);
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        a.expect_kind(GS_HEAD_KIND)?;
        let k = a.meta.get("k").and_then(|v| v.as_u64()).ok_or_else(|| SlatError::Format("missing 'k'".into()))?;
        Self::new(k as usize, a.get_linear("head")?)
    }

    /// Raw head outputs for every voxel, `L x K x 14`.
    pub fn raw(&self, latents: &SparseGrid) -> Result<Vec<f64>> {
        if latents.channels() != self.linear.in_dim {
            return Err(SlatError::Shape(format!(
                "head expects {} latent channels, got {}",
                self.linear.in_dim,
                latents.channels()
            )));
        }
        Ok((0..latents.len()).flat_map(|i| self.linear.apply(latents.feature(i))).collect())
    }
}

/// Builds a set from raw values, `K` consecutive 14-vectors per voxel in
/// anchor order.
pub fn gaussians_from_raw(latents: &SparseGrid, k: usize, raw: &[f64]) -> Result<GaussianSet> {
    if raw.len() != latents.len() * k * RAW_GAUSSIAN {
        return Err(SlatError::Shape(format!("{} raw values for {} voxels x {k}", raw.len(), latents.len())));
    }
    let res = latents.resolution();
    let gaussians = raw
        .chunks(RAW_GAUSSIAN)
        .enumerate()
        .map(|(j, r)| activate_gaussian(r, latents.coords()[j / k], res))
        .collect();
    Ok(GaussianSet { resolution: res, gaussians })
}

pub fn decode_gaussians(latents: &SparseGrid, head: &GaussianHead) -> Result<GaussianSet> {
    gaussians_from_raw(latents, head.k, &head.raw(latents)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_offset_is_voxel_center() {
        let p = VoxelCoord::new(3, 10, 63);
        let g = activate_gaussian(&[0.0; RAW_GAUSSIAN], p, 64);
        assert_eq!(g.center, voxel_center(p, 64));
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.opacity, 0.5);
    }

    #[test]
    fn invariants_hold_for_extreme_raw_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords: Vec<_> = (0..20usize).map(|i| VoxelCoord::from_linear(i * 977 % 4096, 16)).collect();
        let grid = SparseGrid::from_unsorted(16, 0, coords, vec![]).unwrap();
        for scale in [1.0, 50.0, 1e4] {
            let raw: Vec<f64> = (0..grid.len() * 4 * RAW_GAUSSIAN).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let set = gaussians_from_raw(&grid, 4, &raw).unwrap();
            set.check_invariants().unwrap();
            assert!(set.gaussians.iter().all(|g| g.scale.iter().all(|&s| s >= MIN_GAUSSIAN_SCALE)));
        }
    }

    #[test]
    fn head_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = GaussianHead::init(8, 32, &mut rng).unwrap();
        let grid = SparseGrid::new(64, 8, vec![VoxelCoord::new(1, 2, 3)], (0..8).map(f64::from).collect()).unwrap();
        let set = decode_gaussians(&grid, &head).unwrap();
        assert_eq!(set.len(), 32);
        assert!(GaussianHead::new(3, Linear::zeros(8, 40)).is_err());
        let back = GaussianHead::from_archive(&head.to_archive()).unwrap();
        assert_eq!(back.k, 32);
    }
}
