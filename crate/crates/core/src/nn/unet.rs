//! Dense 3D convolution U-Net used to compress occupancy grids into a
//! low-resolution latent and back.
//!
//! Volumes are `DenseTensor`s with dims `[n, n, n, c]`, channels fastest.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::WeightArchive;
use super::linalg::silu;
use super::norm::layer_norm_affine;
use crate::error::{Result, SlatError};
use crate::sparse::ConvKernel;
use crate::tensor::DenseTensor;

fn cube_dims(t: &DenseTensor) -> Result<(usize, usize)> {
    match t.dims.as_slice() {
        &[a, b, c, ch] if a == b && b == c => Ok((a, ch)),
        d => Err(SlatError::Shape(format!("expected an [n,n,n,c] volume, got {d:?}"))),
    }
}

/// 3x3x3 convolution with zero padding. Stride 2 halves the side; output
/// voxel `o` then reads input voxels `2o + d` for `d` in {-1, 0, 1}.
pub fn conv3d(x: &DenseTensor, k: &ConvKernel, stride: usize) -> Result<DenseTensor> {
    let (n, cin) = cube_dims(x)?;
    if cin != k.cin {
        return Err(SlatError::Shape(format!("conv expects {} channels, got {cin}", k.cin)));
    }
    if stride != 1 && stride != 2 || n % stride != 0 {
        return Err(SlatError::Shape(format!("unsupported stride {stride} for side {n}")));
    }
    let m = n / stride;
    let cout = k.cout;
    let mut out = vec![0.0; m * m * m * cout];
    out.par_chunks_mut(cout).enumerate().for_each(|(v, acc)| {
        let (ox, oy, oz) = (v / (m * m), (v / m) % m, v % m);
        acc.copy_from_slice(&k.bias);
        for tap in 0..27 {
            let d = ConvKernel::tap_offset(tap);
            let ix = (ox * stride) as i64 + d[0] as i64;
            let iy = (oy * stride) as i64 + d[1] as i64;
            let iz = (oz * stride) as i64 + d[2] as i64;
            let n = n as i64;
            if ix < 0 || iy < 0 || iz < 0 || ix >= n || iy >= n || iz >= n {
                continue;
            }
            let base = (((ix * n + iy) * n + iz) as usize) * cin;
            for i in 0..cin {
                let xv = x.data[base + i];
                if xv == 0.0 {
                    continue;
                }
                let w = &k.weights[(tap * cin + i) * cout..(tap * cin + i + 1) * cout];
                for (a, wv) in acc.iter_mut().zip(w) {
                    *a += xv * wv;
                }
            }
        }
    });
    DenseTensor::new(vec![m, m, m, cout], out)
}

/// Sub-voxel index of child `(bx, by, bz)` inside a 2x2x2 block: z is the
/// high bit, x the low bit.
pub fn shuffle_index(bx: usize, by: usize, bz: usize) -> usize {
    4 * bz + 2 * by + bx
}

/// `[n,n,n,8c] -> [2n,2n,2n,c]`; input channel `ch * 8 + shuffle_index(..)`.
pub fn pixel_shuffle3d(x: &DenseTensor) -> Result<DenseTensor> {
    let (n, c8) = cube_dims(x)?;
    if c8 % 8 != 0 {
        return Err(SlatError::Shape(format!("pixel shuffle needs a multiple of 8 channels, got {c8}")));
    }
    let c = c8 / 8;
    let m = 2 * n;
    let mut out = vec![0.0; m * m * m * c];
    for x0 in 0..m {
        for y0 in 0..m {
            for z0 in 0..m {
                let src = ((x0 / 2 * n + y0 / 2) * n + z0 / 2) * c8;
                let k = shuffle_index(x0 % 2, y0 % 2, z0 % 2);
                let dst = ((x0 * m + y0) * m + z0) * c;
                for ch in 0..c {
                    out[dst + ch] = x.data[src + ch * 8 + k];
                }
            }
        }
    }
    DenseTensor::new(vec![m, m, m, c], out)
}

/// Inverse of [`pixel_shuffle3d`].
pub fn pixel_unshuffle3d(x: &DenseTensor) -> Result<DenseTensor> {
    let (m, c) = cube_dims(x)?;
    if m % 2 != 0 {
        return Err(SlatError::Shape(format!("pixel unshuffle needs an even side, got {m}")));
    }
    let n = m / 2;
    let mut out = vec![0.0; n * n * n * c * 8];
    for x0 in 0..m {
        for y0 in 0..m {
            for z0 in 0..m {
                let dst = ((x0 / 2 * n + y0 / 2) * n + z0 / 2) * c * 8;
                let k = shuffle_index(x0 % 2, y0 % 2, z0 % 2);
                let src = ((x0 * m + y0) * m + z0) * c;
                for ch in 0..c {
                    out[dst + ch * 8 + k] = x.data[src + ch];
                }
            }
        }
    }
    DenseTensor::new(vec![n, n, n, c * 8], out)
}

/// Per-voxel layer norm over channels, affine, then SiLU.
fn norm_act(x: &DenseTensor, gamma: &[f64], beta: &[f64]) -> Result<DenseTensor> {
    let (_, c) = cube_dims(x)?;
    let mut out = x.clone();
    out.data.par_chunks_mut(c).for_each(|row| {
        let y = layer_norm_affine(row, gamma, beta);
        for (r, v) in row.iter_mut().zip(y) {
            *r = silu(v);
        }
    });
    Ok(out)
}

fn init_kernel(cin: usize, cout: usize, rng: &mut impl Rng) -> ConvKernel {
    let normal = Normal::new(0.0, (1.0 / (27 * cin) as f64).sqrt()).expect("finite std");
    let weights = (0..27 * cin * cout).map(|_| normal.sample(rng)).collect();
    ConvKernel { cin, cout, weights, bias: vec![0.0; cout] }
}

/// `x + conv(act(norm(conv(act(norm(x))))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock3d {
    pub gamma1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub conv1: ConvKernel,
    pub gamma2: Vec<f64>,
    pub beta2: Vec<f64>,
    pub conv2: ConvKernel,
}

impl ResBlock3d {
    fn build(c: usize, conv1: ConvKernel, conv2: ConvKernel) -> Self {
        Self { gamma1: vec![1.0; c], beta1: vec![0.0; c], conv1, gamma2: vec![1.0; c], beta2: vec![0.0; c], conv2 }
    }

    pub fn zeros(c: usize) -> Self {
        Self::build(c, ConvKernel::zeros(c, c), ConvKernel::zeros(c, c))
    }

    pub fn init(c: usize, rng: &mut impl Rng) -> Self {
        let (a, b) = (init_kernel(c, c, rng), init_kernel(c, c, rng));
        Self::build(c, a, b)
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let h = conv3d(&norm_act(x, &self.gamma1, &self.beta1)?, &self.conv1, 1)?;
        let h = conv3d(&norm_act(&h, &self.gamma2, &self.beta2)?, &self.conv2, 1)?;
        DenseTensor::new(x.dims.clone(), x.data.iter().zip(&h.data).map(|(a, b)| a + b).collect())
    }
}

pub const UNET_KIND: &str = "structure-vae";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub resolution: usize,
    pub in_channels: usize,
    /// Channel width per stage, finest first; each later stage halves the side.
    pub channels: Vec<usize>,
    pub latent_channels: usize,
    pub blocks_per_stage: usize,
}

impl UnetConfig {
    /// 64^3 occupancy to a 16^3 x 8 latent with widths 32/128/512.
    pub fn standard() -> Self {
        Self { resolution: 64, in_channels: 1, channels: vec![32, 128, 512], latent_channels: 8, blocks_per_stage: 2 }
    }

    pub fn latent_resolution(&self) -> usize {
        self.resolution >> (self.channels.len() - 1)
    }

    /// `[n, n, n, latent_channels]` for each of mean and log-variance.
    pub fn latent_dims(&self) -> Vec<usize> {
        let n = self.latent_resolution();
        vec![n, n, n, self.latent_channels]
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.channels.len();
        if stages == 0 || !self.resolution.is_multiple_of(1 << (stages - 1)) || self.channels.contains(&0) {
            return Err(SlatError::Shape(format!("invalid U-Net config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub blocks: Vec<ResBlock3d>,
    /// Resampling conv into the neighbouring stage (absent on the last).
    pub resample: Option<ConvKernel>,
}

/// Encoder: residual stages with stride-2 downsampling, ending in a conv
/// that emits mean and log-variance.
/// Decoder: mirror image with pixel-shuffle upsampling, ending in one
/// occupancy logit per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnet3d {
    pub config: UnetConfig,
    pub enc_in: ConvKernel,
    pub enc_stages: Vec<Stage>,
    pub enc_out: ConvKernel,
    pub dec_in: ConvKernel,
    /// Coarsest first.
    pub dec_stages: Vec<Stage>,
    pub dec_out: ConvKernel,
}

impl ConvUnet3d {
    fn build(config: UnetConfig, mut kernel: impl FnMut(usize, usize) -> ConvKernel, mut block: impl FnMut(usize) -> ResBlock3d) -> Result<Self> {
        config.validate()?;
        let ch = config.channels.clone();
        let s = ch.len();
        let lat = config.latent_channels;
        let enc_in = kernel(config.in_channels, ch[0]);
        let mut enc_stages = Vec::new();
        for i in 0..s {
            let blocks = (0..config.blocks_per_stage).map(|_| block(ch[i])).collect();
            let resample = (i + 1 < s).then(|| kernel(ch[i], ch[i + 1]));
            enc_stages.push(Stage { blocks, resample });
        }
        let enc_out = kernel(ch[s - 1], 2 * lat);
        let dec_in = kernel(lat, ch[s - 1]);
        let mut dec_stages = Vec::new();
        for i in (0..s).rev() {
            let blocks = (0..config.blocks_per_stage).map(|_| block(ch[i])).collect();
            let resample = (i > 0).then(|| kernel(ch[i], 8 * ch[i - 1]));
            dec_stages.push(Stage { blocks, resample });
        }
        let dec_out = kernel(ch[0], 1);
        Ok(Self { config, enc_in, enc_stages, enc_out, dec_in, dec_stages, dec_out })
    }

    pub fn zeros(config: UnetConfig) -> Result<Self> {
        Self::build(config, ConvKernel::zeros, ResBlock3d::zeros)
    }

    pub fn init(config: UnetConfig, rng: &mut impl Rng) -> Result<Self> {
        let rng = std::cell::RefCell::new(rng);
        Self::build(
            config,
            |a, b| init_kernel(a, b, &mut *rng.borrow_mut()),
            |c| ResBlock3d::init(c, &mut *rng.borrow_mut()),
        )
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new(UNET_KIND, serde_json::to_value(&self.config).expect("config serializes"));
        a.put_conv("enc_in", &self.enc_in);
        a.put_conv("enc_out", &self.enc_out);
        a.put_conv("dec_in", &self.dec_in);
        a.put_conv("dec_out", &self.dec_out);
        for (side, stages) in [("enc", &self.enc_stages), ("dec", &self.dec_stages)] {
            for (i, st) in stages.iter().enumerate() {
                for (j, b) in st.blocks.iter().enumerate() {
                    let n = format!("{side}{i}.blk{j}");
                    a.put_vec(&format!("{n}.gamma1"), &b.gamma1);
                    a.put_vec(&format!("{n}.beta1"), &b.beta1);
                    a.put_conv(&format!("{n}.conv1"), &b.conv1);
                    a.put_vec(&format!("{n}.gamma2"), &b.gamma2);
                    a.put_vec(&format!("{n}.beta2"), &b.beta2);
                    a.put_conv(&format!("{n}.conv2"), &b.conv2);
                }
                if let Some(k) = &st.resample {
                    a.put_conv(&format!("{side}{i}.resample"), k);
                }
            }
        }
        a
    }

    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        a.expect_kind(UNET_KIND)?;
        let config: UnetConfig = serde_json::from_value(a.meta.clone())?;
        let mut m = Self::zeros(config)?;
        m.enc_in = a.get_conv("enc_in")?;
        m.enc_out = a.get_conv("enc_out")?;
        m.dec_in = a.get_conv("dec_in")?;
        m.dec_out = a.get_conv("dec_out")?;
        for (side, stages) in [("enc", &mut m.enc_stages), ("dec", &mut m.dec_stages)] {
            for (i, st) in stages.iter_mut().enumerate() {
                for (j, b) in st.blocks.iter_mut().enumerate() {
                    let n = format!("{side}{i}.blk{j}");
                    b.gamma1 = a.get_vec(&format!("{n}.gamma1"))?;
                    b.beta1 = a.get_vec(&format!("{n}.beta1"))?;
                    b.conv1 = a.get_conv(&format!("{n}.conv1"))?;
                    b.gamma2 = a.get_vec(&format!("{n}.gamma2"))?;
                    b.beta2 = a.get_vec(&format!("{n}.beta2"))?;
                    b.conv2 = a.get_conv(&format!("{n}.conv2"))?;
                }
                if st.resample.is_some() {
                    st.resample = Some(a.get_conv(&format!("{side}{i}.resample"))?);
                }
            }
        }
        Ok(m)
    }

    /// Returns `(mean, logvar)`, each `[n', n', n', latent_channels]`.
    pub fn encode(&self, x: &DenseTensor) -> Result<(DenseTensor, DenseTensor)> {
        let (n, c) = cube_dims(x)?;
        if n != self.config.resolution || c != self.config.in_channels {
            return Err(SlatError::Shape(format!(
                "encoder expects {}^3 x {}, got {n}^3 x {c}",
                self.config.resolution, self.config.in_channels
            )));
        }
        let mut h = conv3d(x, &self.enc_in, 1)?;
        for st in &self.enc_stages {
            for b in &st.blocks {
                h = b.forward(&h)?;
            }
            if let Some(k) = &st.resample {
                h = conv3d(&h, k, 2)?;
            }
        }
        let out = conv3d(&h, &self.enc_out, 1)?;
        let lat = self.config.latent_channels;
        let (m, _) = cube_dims(&out)?;
        let mut mean = Vec::with_capacity(m * m * m * lat);
        let mut logvar = Vec::with_capacity(m * m * m * lat);
        for row in out.data.chunks(2 * lat) {
            mean.extend_from_slice(&row[..lat]);
            logvar.extend_from_slice(&row[lat..]);
        }
        Ok((
            DenseTensor::new(vec![m, m, m, lat], mean)?,
            DenseTensor::new(vec![m, m, m, lat], logvar)?,
        ))
    }

    /// Occupancy logits `[n, n, n, 1]` from a latent.
    pub fn decode(&self, z: &DenseTensor) -> Result<DenseTensor> {
        if z.dims != self.config.latent_dims() {
            return Err(SlatError::Shape(format!(
                "decoder expects latent {:?}, got {:?}",
                self.config.latent_dims(),
                z.dims
            )));
        }
        let mut h = conv3d(z, &self.dec_in, 1)?;
        for st in &self.dec_stages {
            for b in &st.blocks {
                h = b.forward(&h)?;
            }
            if let Some(k) = &st.resample {
                h = pixel_shuffle3d(&conv3d(&h, k, 1)?)?;
            }
        }
        conv3d(&h, &self.dec_out, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, n: usize, c: usize) -> DenseTensor {
        DenseTensor::new(vec![n, n, n, c], (0..n * n * n * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shuffle_of_single_voxel() {
        let x = DenseTensor::new(vec![1, 1, 1, 8], (0..8).map(f64::from).collect()).unwrap();
        let y = pixel_shuffle3d(&x).unwrap();
        assert_eq!(y.dims, vec![2, 2, 2, 1]);
        for bx in 0..2 {
            for by in 0..2 {
                for bz in 0..2 {
                    assert_eq!(y.data[(bx * 2 + by) * 2 + bz], (4 * bz + 2 * by + bx) as f64);
                }
            }
        }
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_volume(&mut rng, 3, 16);
        assert_eq!(pixel_unshuffle3d(&pixel_shuffle3d(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_volume(&mut rng, 4, 2);
        let k = init_kernel(2, 3, &mut rng);
        for stride in [1, 2] {
            let y = conv3d(&x, &k, stride).unwrap();
            let m = 4 / stride;
            for v in 0..m * m * m {
                let o = [v / (m * m), (v / m) % m, v % m];
                for co in 0..3 {
                    let mut want = k.bias[co];
                    for dx in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dz in -1i64..=1 {
                                let p = [o[0] as i64 * stride as i64 + dx, o[1] as i64 * stride as i64 + dy, o[2] as i64 * stride as i64 + dz];
                                if p.iter().any(|&q| !(0..4).contains(&q)) {
                                    continue;
                                }
                                let tap = ConvKernel::tap_index([dx as i32, dy as i32, dz as i32]);
                                for ci in 0..2 {
                                    want += k.weight(tap, ci, co) * x.data[((p[0] * 4 + p[1]) * 4 + p[2]) as usize * 2 + ci];
                                }
                            }
                        }
                    }
                    assert!((y.data[v * 3 + co] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let cfg = UnetConfig { resolution: 8, in_channels: 1, channels: vec![2, 4], latent_channels: 3, blocks_per_stage: 1 };
        let net = ConvUnet3d::zeros(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random_volume(&mut rng, 4, 3);
        let logits = net.decode(&z).unwrap();
        assert_eq!(logits.dims, vec![8, 8, 8, 1]);
        assert!(logits.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn archive_round_trip() {
        let cfg = UnetConfig { resolution: 8, in_channels: 1, channels: vec![2, 3], latent_channels: 2, blocks_per_stage: 1 };
        let m = ConvUnet3d::init(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.to_archive().save(dir.path()).unwrap();
        let back = ConvUnet3d::from_archive(&WeightArchive::load(dir.path()).unwrap()).unwrap();
        let z = random_volume(&mut ChaCha8Rng::seed_from_u64(5), 4, 2);
        let (a, b) = (m.decode(&z).unwrap(), back.decode(&z).unwrap());
        assert_eq!(a.dims, b.dims);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-4));
    }

    #[test]
    fn standard_shapes() {
        let cfg = UnetConfig::standard();
        assert_eq!(cfg.latent_dims(), vec![16, 16, 16, 8]);
        // Same 64 -> 16 stage layout with narrow widths to keep the run short.
        let small = UnetConfig { channels: vec![2, 4, 4], blocks_per_stage: 1, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ConvUnet3d::init(small, &mut rng).unwrap();
        let x = DenseTensor::new(vec![64, 64, 64, 1], (0..64 * 64 * 64).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        let (mean, logvar) = net.encode(&x).unwrap();
        assert_eq!(mean.dims, vec![16, 16, 16, 8]);
        assert_eq!(logvar.dims, vec![16, 16, 16, 8]);
        let logits = net.decode(&mean).unwrap();
        assert_eq!(logits.dims, vec![64, 64, 64, 1]);
        assert!(logits.data.iter().all(|v| v.is_finite()));
    }
}
