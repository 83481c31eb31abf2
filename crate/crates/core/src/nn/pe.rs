use crate::error::{Result, SlatError};
use crate::sparse::VoxelCoord;

const BASE: f64 = 10_000.0;

/// Width of the sinusoidal timestep features fed to the timestep MLP.
pub const TIMESTEP_FEATURES: usize = 256;

fn ladder(value: f64, half: usize, out: &mut Vec<f64>) {
    let freqs: Vec<f64> = (0..half).map(|k| BASE.powf(-(k as f64) / half as f64)).collect();
    out.extend(freqs.iter().map(|w| (value * w).sin()));
    out.extend(freqs.iter().map(|w| (value * w).cos()));
}

/// Sinusoidal encoding of a voxel position: `dim / 3` channels per axis
/// (sines then cosines over a geometric frequency ladder), concatenated x, y, z.
pub fn sinusoidal_pe(p: VoxelCoord, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(6) {
        return Err(SlatError::Shape(format!("positional encoding width {dim} must be a multiple of 6")));
    }
    let half = dim / 6;
    let mut out = Vec::with_capacity(dim);
    for v in p.as_array() {
        ladder(v as f64, half, &mut out);
    }
    Ok(out)
}

/// Sinusoidal features of a flow timestep `t in [0, 1]` (scaled by 1000 so the
/// ladder spans the same range as integer diffusion steps).
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    ladder(t * 1000.0, dim / 2, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    #[test]
    fn zero_phase() {
        let pe = sinusoidal_pe(VoxelCoord::new(0, 0, 0), 48).unwrap();
        for axis in pe.chunks(16) {
            assert!(axis[..8].iter().all(|&v| v == 0.0));
            assert!(axis[8..].iter().all(|&v| v == 1.0));
        }
        assert!(sinusoidal_pe(VoxelCoord::new(0, 0, 0), 10).is_err());
    }

    #[test]
    fn range_and_no_collisions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(64);
        let mut set = BTreeSet::new();
        while set.len() < 4096 {
            set.insert((rng.random_range(0..64u32), rng.random_range(0..64u32), rng.random_range(0..64u32)));
        }
        let pes: Vec<Vec<f64>> = set
            .into_iter()
            .map(|(x, y, z)| sinusoidal_pe(VoxelCoord::new(x, y, z), 48).unwrap())
            .collect();
        assert!(pes.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        let mut min_gap = f64::INFINITY;
        for i in 0..pes.len() {
            for j in i + 1..pes.len() {
                let d: f64 = pes[i].iter().zip(&pes[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                min_gap = min_gap.min(d.sqrt());
            }
        }
        assert!(min_gap > 1e-6, "min gap {min_gap}");
    }
}
