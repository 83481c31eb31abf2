//! Synthetic training sets for the toy flows.

use rand::Rng;
use rand_distr::StandardNormal;

use super::train::DataItem;
use crate::error::Result;
use crate::nn::{pixel_unshuffle3d, sinusoidal_pe};
use crate::sparse::{DenseBinaryGrid, SparseGrid, VoxelCoord};
use crate::tensor::DenseTensor;

/// Point on the noise-free two-moons curves, `s` in [0, 1) per moon.
pub fn moon_point(upper: bool, s: f64) -> [f64; 2] {
    let a = std::f64::consts::PI * s;
    if upper { [a.cos(), a.sin()] } else { [1.0 - a.cos(), 0.5 - a.sin()] }
}

/// Uniform samples on the two moons plus isotropic Gaussian noise.
pub fn two_moons(n: usize, noise: f64, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let p = moon_point(i % 2 == 0, rng.random::<f64>());
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            [p[0] + noise * a, p[1] + noise * b]
        })
        .collect()
}

/// Dense evenly spaced reference sampling of both moons.
pub fn moons_reference(per_moon: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(2 * per_moon);
    for upper in [true, false] {
        for k in 0..per_moon {
            out.push(moon_point(upper, k as f64 / (per_moon - 1).max(1) as f64));
        }
    }
    out
}

pub fn gaussian_points(n: usize, mean: &[f64], std: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

/// All axis-aligned boxes in an `n^3` grid whose sides are at least `min_side`.
pub fn box_family(n: u32, min_side: u32) -> Vec<DenseBinaryGrid> {
    let mut spans = Vec::new();
    for lo in 0..n {
        for hi in lo + min_side..=n {
            spans.push((lo, hi));
        }
    }
    let mut out = Vec::new();
    for &(x0, x1) in &spans {
        for &(y0, y1) in &spans {
            for &(z0, z1) in &spans {
                let mut g = DenseBinaryGrid::new(n);
                for x in x0..x1 {
                    for y in y0..y1 {
                        for z in z0..z1 {
                            g.set(VoxelCoord::new(x, y, z), true);
                        }
                    }
                }
                out.push(g);
            }
        }
    }
    out
}

/// Occupancy as a `[n,n,n,1]` volume of +1 (occupied) / -1 (empty).
pub fn occupancy_volume(g: &DenseBinaryGrid) -> DenseTensor {
    let n = g.resolution() as usize;
    let data = g.values().iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    DenseTensor { dims: vec![n, n, n, 1], data }
}

/// Exact latent of an occupancy grid for the pixel-shuffle structure
/// decoder: the signed occupancy folded into 8 channels per 2^3 block.
pub fn occupancy_latent(g: &DenseBinaryGrid) -> Result<DenseTensor> {
    pixel_unshuffle3d(&occupancy_volume(g))
}

/// Per-voxel latent used by the toy second stage: a smooth function of
/// position, so a per-token model can learn it from its positional input.
pub fn toy_voxel_latent(p: VoxelCoord, resolution: u32, channels: usize) -> Vec<f64> {
    let a = p.as_array().map(|v| (v as f64 + 0.5) / resolution as f64 - 0.5);
    (0..channels).map(|c| a[c % 3] * if c / 3 % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

/// Stage-two training items: one per active voxel of each structure,
/// with positional encodings as aux input.
pub fn toy_token_items(structures: &[SparseGrid], channels: usize, pe_dim: usize) -> Result<Vec<DataItem>> {
    let mut items = Vec::new();
    for s in structures {
        for &p in s.coords() {
            items.push(DataItem {
                x0: toy_voxel_latent(p, s.resolution(), channels),
                aux: if pe_dim == 0 { Vec::new() } else { sinusoidal_pe(p, pe_dim)? },
                cond: None,
            });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn box_family_counts() {
        // Spans of length >= 1 in 4 cells: 10 per axis.
        assert_eq!(box_family(4, 1).len(), 1000);
        assert_eq!(box_family(4, 2).len(), 216);
        let b = &box_family(4, 4)[0];
        assert_eq!(b.count(), 64);
    }

    #[test]
    fn moons_lie_on_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let refs = moons_reference(2000);
        for p in two_moons(100, 0.0, &mut rng) {
            let d = refs.iter().map(|r| ((r[0] - p[0]).powi(2) + (r[1] - p[1]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(d < 2e-3);
        }
    }

    #[test]
    fn latent_of_full_box() {
        let b = &box_family(4, 4)[0];
        let z = occupancy_latent(b).unwrap();
        assert_eq!(z.dims, vec![2, 2, 2, 8]);
        assert!(z.data.iter().all(|&v| v == 1.0));
    }
}
