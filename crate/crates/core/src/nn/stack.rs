//! Flow transformer over sparse tokens: input projection with positional
//! encoding, optional packing into a half-resolution sequence, a stack of
//! modulated blocks with alternating window shifts, and an output head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adaln::{AdaLnBlock, TimestepEmbedder};
use super::linalg::{silu, Linear, Mat};
use super::norm::layer_norm;
use super::pe::sinusoidal_pe;
use super::window::WindowConfig;
use crate::error::{Result, SlatError};
use crate::sparse::{avg_pool2, nearest_unpool2, sparse_conv3, ConvKernel, SparseGrid, VoxelCoord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub in_channels: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub window_size: u32,
    /// Width of condition tokens; `None` disables cross-attention.
    pub cond_dim: Option<usize>,
    /// Pool 2x before the blocks and unpool after, with a skip connection.
    pub packed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTransformer {
    pub config: TransformerConfig,
    pub input: Linear,
    pub time: TimestepEmbedder,
    /// Convolutions around the pooling step (present when packed).
    pub down: Option<ConvKernel>,
    pub up: Option<ConvKernel>,
    pub blocks: Vec<AdaLnBlock>,
    pub output: Linear,
}

fn init_conv(c: usize, rng: &mut impl Rng) -> ConvKernel {
    let mut k = ConvKernel::zeros(c, c);
    let s = (1.0 / (27 * c) as f64).sqrt();
    for w in &mut k.weights {
        *w = rng.random_range(-s..s);
    }
    k
}

impl FlowTransformer {
    pub fn init(config: TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = config.model_dim;
        if !d.is_multiple_of(6) {
            return Err(SlatError::Shape(format!("model dim {d} must be a multiple of 6 for positional encoding")));
        }
        let input = Linear::init(config.in_channels, d, rng);
        let time = TimestepEmbedder::init(d, rng);
        let (down, up) = if config.packed { (Some(init_conv(d, rng)), Some(init_conv(d, rng))) } else { (None, None) };
        let blocks = (0..config.layers)
            .map(|i| {
                let window = if i % 2 == 0 {
                    WindowConfig::new(config.window_size, [0; 3])?
                } else {
                    WindowConfig::shifted(config.window_size)
                };
                AdaLnBlock::init(d, config.heads, d, config.cond_dim, window, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::init(d, config.in_channels, rng);
        Ok(Self { config, input, time, down, up, blocks, output })
    }

    /// Velocity for the latents `x` (one row per active voxel of `structure`).
    pub fn forward(&self, structure: &SparseGrid, x: &Mat, t: f64, cond: Option<&Mat>) -> Result<Mat> {
        let d = self.config.model_dim;
        if x.rows != structure.len() || x.cols != self.config.in_channels {
            return Err(SlatError::Shape(format!(
                "expected {} x {} latents, got {} x {}",
                structure.len(),
                self.config.in_channels,
                x.rows,
                x.cols
            )));
        }
        let mut h = self.input.forward(x)?;
        for (r, &c) in structure.coords().iter().enumerate() {
            for (v, p) in h.row_mut(r).iter_mut().zip(sinusoidal_pe(c, d)?) {
                *v += p;
            }
        }
        let temb = self.time.embed(t);

        let fine = structure.with_features(d, h.data.clone())?;
        let (work, coords): (Mat, Vec<VoxelCoord>) = match &self.down {
            Some(k) => {
                let pooled = avg_pool2(&sparse_conv3(&fine, k)?)?;
                (Mat::new(pooled.len(), d, pooled.features().to_vec())?, pooled.coords().to_vec())
            }
            None => (h.clone(), structure.coords().to_vec()),
        };

        let mut y = work;
        for b in &self.blocks {
            y = b.forward(&y, &coords, &temb, cond)?;
        }

        if let Some(k) = &self.up {
            let coarse = SparseGrid::new(structure.resolution() / 2, d, coords, y.data)?;
            let un = nearest_unpool2(&coarse, structure)?;
            let skip: Vec<f64> = un.features().iter().zip(fine.features()).map(|(a, b)| a + b).collect();
            let out = sparse_conv3(&structure.with_features(d, skip)?, k)?;
            y = Mat::new(structure.len(), d, out.features().to_vec())?;
        }

        let mut head = Mat::zeros(y.rows, d);
        for r in 0..y.rows {
            let n: Vec<f64> = layer_norm(y.row(r)).into_iter().map(silu).collect();
            head.row_mut(r).copy_from_slice(&n);
        }
        self.output.forward(&head)
    }
}
