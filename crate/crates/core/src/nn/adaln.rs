//! Transformer blocks: plain windowed blocks for the VAEs and
//! timestep-modulated blocks for the flow generators.

use rand::Rng;

use super::attention::{cross_attention, windowed_mhsa, AttentionWeights};
use super::linalg::{gelu, silu, Linear, Mat};
use super::norm::layer_norm;
use super::pe::{timestep_features, TIMESTEP_FEATURES};
use super::window::WindowConfig;
use crate::error::{Result, SlatError};
use crate::sparse::VoxelCoord;

/// Hidden width multiplier of the feed-forward sub-layer.
pub const FFN_RATIO: usize = 4;

/// Two-layer GELU MLP applied per token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn zeros(dim: usize) -> Self {
        Self { fc1: Linear::zeros(dim, dim * FFN_RATIO), fc2: Linear::zeros(dim * FFN_RATIO, dim) }
    }

    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        Self { fc1: Linear::init(dim, dim * FFN_RATIO, rng), fc2: Linear::init(dim * FFN_RATIO, dim, rng) }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.fc1.apply(x).into_iter().map(gelu).collect();
        self.fc2.apply(&h)
    }
}

/// Maps a scalar timestep to a model-width embedding: sinusoidal features
/// followed by a SiLU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepEmbedder {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimestepEmbedder {
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        Self { fc1: Linear::init(TIMESTEP_FEATURES, dim, rng), fc2: Linear::init(dim, dim, rng) }
    }

    pub fn dim(&self) -> usize {
        self.fc2.out_dim
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let h: Vec<f64> = self.fc1.apply(&timestep_features(t, TIMESTEP_FEATURES)).into_iter().map(silu).collect();
        self.fc2.apply(&h)
    }
}

/// Shift, scale and gate for one sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub gate: Vec<f64>,
}

impl Modulation {
    fn modulate(&self, x: &[f64]) -> Vec<f64> {
        layer_norm(x).iter().zip(&self.scale).zip(&self.shift).map(|((v, s), b)| s * v + b).collect()
    }
}

/// Modulation for the self-attention, cross-attention and FFN sub-layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub msa: Modulation,
    pub mca: Modulation,
    pub ffn: Modulation,
}

/// Number of per-channel modulation vectors produced per block.
pub const MODULATION_CHUNKS: usize = 9;

impl ModulationParams {
    /// Splits the raw `9 * dim` output of the modulation map. The raw scale
    /// is an offset from 1 so a zero map yields unit scale.
    pub fn from_raw(raw: &[f64], dim: usize) -> Result<Self> {
        if raw.len() != MODULATION_CHUNKS * dim {
            return Err(SlatError::Shape(format!("modulation needs {} values, got {}", 9 * dim, raw.len())));
        }
        let chunk = |i: usize| raw[i * dim..(i + 1) * dim].to_vec();
        let sub = |base: usize| Modulation {
            shift: chunk(base),
            scale: chunk(base + 1).into_iter().map(|s| 1.0 + s).collect(),
            gate: chunk(base + 2),
        };
        Ok(Self { msa: sub(0), mca: sub(3), ffn: sub(6) })
    }
}

/// Pre-norm residual block with timestep modulation and gating:
/// windowed self-attention, optional cross-attention, FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaLnBlock {
    pub dim: usize,
    pub attn: AttentionWeights,
    pub cross: Option<AttentionWeights>,
    pub ffn: FeedForward,
    /// Maps SiLU(timestep embedding) to the nine modulation vectors.
    pub modulation: Linear,
    pub window: WindowConfig,
}

impl AdaLnBlock {
    /// Random projections with a zero modulation map, so the block starts
    /// as the identity.
    pub fn init(
        dim: usize,
        heads: usize,
        embed_dim: usize,
        cond_dim: Option<usize>,
        window: WindowConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            dim,
            attn: AttentionWeights::init(dim, dim, heads, rng)?,
            cross: cond_dim.map(|c| AttentionWeights::init(dim, c, heads, rng)).transpose()?,
            ffn: FeedForward::init(dim, rng),
            modulation: Linear::zeros(embed_dim, MODULATION_CHUNKS * dim),
            window,
        })
    }

    pub fn modulation_params(&self, t_embed: &[f64]) -> Result<ModulationParams> {
        if t_embed.len() != self.modulation.in_dim {
            return Err(SlatError::Shape("timestep embedding width mismatch".into()));
        }
        let act: Vec<f64> = t_embed.iter().map(|&v| silu(v)).collect();
        ModulationParams::from_raw(&self.modulation.apply(&act), self.dim)
    }

    pub fn forward(&self, x: &Mat, coords: &[VoxelCoord], t_embed: &[f64], cond: Option<&Mat>) -> Result<Mat> {
        if x.cols != self.dim {
            return Err(SlatError::Shape(format!("block expects {} channels, got {}", self.dim, x.cols)));
        }
        let m = self.modulation_params(t_embed)?;
        let mut x = x.clone();

        let h = modulated(&x, &m.msa);
        let a = windowed_mhsa(&h, coords, &self.attn, &self.window)?;
        gated_add(&mut x, &a, &m.msa.gate);

        if let Some(cw) = &self.cross {
            let cond = cond.ok_or_else(|| SlatError::Empty("block has cross-attention but no condition".into()))?;
            let h = modulated(&x, &m.mca);
            let a = cross_attention(&h, cond, cw)?;
            gated_add(&mut x, &a, &m.mca.gate);
        }

        let h = modulated(&x, &m.ffn);
        let mut f = Mat::zeros(x.rows, self.dim);
        for r in 0..x.rows {
            f.row_mut(r).copy_from_slice(&self.ffn.apply(h.row(r)));
        }
        gated_add(&mut x, &f, &m.ffn.gate);
        Ok(x)
    }
}

fn modulated(x: &Mat, m: &Modulation) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        out.row_mut(r).copy_from_slice(&m.modulate(x.row(r)));
    }
    out
}

fn gated_add(x: &mut Mat, update: &Mat, gate: &[f64]) {
    for r in 0..x.rows {
        for ((v, u), g) in x.row_mut(r).iter_mut().zip(update.row(r)).zip(gate) {
            *v += g * u;
        }
    }
}

/// Unmodulated pre-norm windowed block (self-attention + FFN) as used by
/// the sparse VAEs.
#[derive(Debug, Clone, PartialEq)]
pub struct SwinBlock {
    pub attn: AttentionWeights,
    pub ffn: FeedForward,
    pub window: WindowConfig,
}

impl SwinBlock {
    pub fn init(dim: usize, heads: usize, window: WindowConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self { attn: AttentionWeights::init(dim, dim, heads, rng)?, ffn: FeedForward::init(dim, rng), window })
    }

    pub fn forward(&self, x: &Mat, coords: &[VoxelCoord]) -> Result<Mat> {
        let norm = |m: &Mat| {
            let mut out = Mat::zeros(m.rows, m.cols);
            for r in 0..m.rows {
                out.row_mut(r).copy_from_slice(&layer_norm(m.row(r)));
            }
            out
        };
        let x = x.add(&windowed_mhsa(&norm(x), coords, &self.attn, &self.window)?)?;
        let h = norm(&x);
        let mut f = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            f.row_mut(r).copy_from_slice(&self.ffn.apply(h.row(r)));
        }
        x.add(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (AdaLnBlock, Mat, Vec<VoxelCoord>, Vec<f64>, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = AdaLnBlock::init(8, 2, 6, Some(5), WindowConfig::new(4, [2, 2, 2]).unwrap(), &mut rng).unwrap();
        b.modulation = Linear::init(6, 72, &mut rng);
        let coords: Vec<_> = (0..20u32).map(|i| VoxelCoord::new(i % 7, (i * 3) % 5, i / 3)).collect();
        let x = Mat::new(20, 8, (0..160).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = Mat::new(3, 5, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (b, x, coords, t, c)
    }

    #[test]
    fn zero_gates_are_identity() {
        let (mut b, x, coords, t, c) = setup(1);
        for o in 0..b.dim {
            for chunk in [2, 5, 8] {
                let row = chunk * b.dim + o;
                b.modulation.bias[row] = 0.0;
                b.modulation.weight[row * 6..(row + 1) * 6].fill(0.0);
            }
        }
        assert_eq!(b.forward(&x, &coords, &t, Some(&c)).unwrap(), x);
    }

    #[test]
    fn zero_sublayers_are_identity() {
        let (mut b, x, coords, t, c) = setup(2);
        b.attn.out = Linear::zeros(8, 8);
        b.cross.as_mut().unwrap().out = Linear::zeros(8, 8);
        b.ffn = FeedForward::zeros(8);
        assert_eq!(b.forward(&x, &coords, &t, Some(&c)).unwrap(), x);
    }

    #[test]
    fn fresh_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = AdaLnBlock::init(8, 2, 6, None, WindowConfig::default(), &mut rng).unwrap();
        let x = Mat::new(2, 8, (0..16).map(|v| v as f64).collect()).unwrap();
        let coords = [VoxelCoord::new(0, 0, 0), VoxelCoord::new(1, 0, 0)];
        assert_eq!(b.forward(&x, &coords, &[0.3; 6], None).unwrap(), x);
    }

    #[test]
    fn missing_condition_is_an_error() {
        let (b, x, coords, t, _) = setup(4);
        assert!(b.forward(&x, &coords, &t, None).is_err());
    }

    #[test]
    fn timestep_embedding_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = TimestepEmbedder::init(16, &mut r1);
        let b = TimestepEmbedder::init(16, &mut r2);
        assert_eq!(a.embed(0.37), b.embed(0.37));
        assert_ne!(a.embed(0.37), a.embed(0.38));
        assert_eq!(a.dim(), 16);
    }
}
