//! Multi-head attention with RMS-normalized queries and keys.

use rand::Rng;
use rayon::prelude::*;

use super::linalg::{Linear, Mat};
use super::norm::qk_rmsnorm;
use super::window::{window_partition, WindowConfig};
use crate::error::{Result, SlatError};
use crate::sparse::VoxelCoord;

/// Projections for one attention layer. For cross-attention the key/value
/// projections read from the condition width instead of the model width.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub dim: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    /// Per-channel gains of the query/key RMSNorm (length `dim / heads`).
    pub q_gain: Vec<f64>,
    pub k_gain: Vec<f64>,
}

impl AttentionWeights {
    pub fn zeros(dim: usize, kv_dim: usize, heads: usize) -> Result<Self> {
        check_heads(dim, heads)?;
        let hd = dim / heads;
        Ok(Self {
            dim,
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(kv_dim, dim),
            v: Linear::zeros(kv_dim, dim),
            out: Linear::zeros(dim, dim),
            q_gain: vec![1.0; hd],
            k_gain: vec![1.0; hd],
        })
    }

    pub fn init(dim: usize, kv_dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        check_heads(dim, heads)?;
        let hd = dim / heads;
        Ok(Self {
            dim,
            heads,
            q: Linear::init(dim, dim, rng),
            k: Linear::init(kv_dim, dim, rng),
            v: Linear::init(kv_dim, dim, rng),
            out: Linear::init(dim, dim, rng),
            q_gain: vec![1.0; hd],
            k_gain: vec![1.0; hd],
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn queries(&self, x: &Mat) -> Result<Mat> {
        let mut q = self.q.forward(x)?;
        for r in 0..q.rows {
            qk_rmsnorm(q.row_mut(r), &self.q_gain);
        }
        Ok(q)
    }

    fn keys_values(&self, src: &Mat) -> Result<(Mat, Mat)> {
        let mut k = self.k.forward(src)?;
        for r in 0..k.rows {
            qk_rmsnorm(k.row_mut(r), &self.k_gain);
        }
        Ok((k, self.v.forward(src)?))
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(SlatError::Shape(format!("model dim {dim} not divisible by {heads} heads")));
    }
    Ok(())
}

/// Numerically stable softmax in place.
pub fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Attention of query row `qi` over the key/value rows listed in `keys`.
fn attend_row(q: &[f64], k: &Mat, v: &Mat, keys: &[usize], heads: usize) -> Vec<f64> {
    let dim = q.len();
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; dim];
    let mut scores = vec![0.0; keys.len()];
    for h in 0..heads {
        let qs = &q[h * hd..(h + 1) * hd];
        for (s, &j) in scores.iter_mut().zip(keys) {
            let ks = &k.row(j)[h * hd..(h + 1) * hd];
            *s = qs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax(&mut scores);
        let o = &mut out[h * hd..(h + 1) * hd];
        for (&w, &j) in scores.iter().zip(keys) {
            let vs = &v.row(j)[h * hd..(h + 1) * hd];
            for (oc, vc) in o.iter_mut().zip(vs) {
                *oc += w * vc;
            }
        }
    }
    out
}

/// Full self-attention over every token.
pub fn self_attention(x: &Mat, w: &AttentionWeights) -> Result<Mat> {
    let all: Vec<usize> = (0..x.rows).collect();
    grouped_attention(x, w, &[all])
}

fn grouped_attention(x: &Mat, w: &AttentionWeights, groups: &[Vec<usize>]) -> Result<Mat> {
    if x.cols != w.dim {
        return Err(SlatError::Shape(format!("tokens have {} channels, layer expects {}", x.cols, w.dim)));
    }
    let q = w.queries(x)?;
    let (k, v) = w.keys_values(x)?;
    let rows: Vec<(usize, Vec<f64>)> = groups
        .par_iter()
        .flat_map_iter(|g| g.iter().map(|&i| (i, attend_row(q.row(i), &k, &v, g, w.heads))).collect::<Vec<_>>())
        .collect();
    let mut mixed = Mat::zeros(x.rows, w.dim);
    for (i, row) in rows {
        mixed.row_mut(i).copy_from_slice(&row);
    }
    w.out.forward(&mixed)
}

/// Multi-head self-attention restricted to 3D windows; each token attends
/// only to tokens of its own window.
pub fn windowed_mhsa(
    x: &Mat,
    coords: &[VoxelCoord],
    w: &AttentionWeights,
    cfg: &WindowConfig,
) -> Result<Mat> {
    if coords.len() != x.rows {
        return Err(SlatError::Shape(format!("{} tokens but {} coordinates", x.rows, coords.len())));
    }
    grouped_attention(x, w, &window_partition(coords, cfg))
}

/// Queries from `x`, keys and values from the condition tokens.
pub fn cross_attention(x: &Mat, cond: &Mat, w: &AttentionWeights) -> Result<Mat> {
    if cond.rows == 0 {
        return Err(SlatError::Empty("cross-attention needs at least one condition token".into()));
    }
    if x.cols != w.dim || cond.cols != w.k.in_dim {
        return Err(SlatError::Shape("cross-attention width mismatch".into()));
    }
    let q = w.queries(x)?;
    let (k, v) = w.keys_values(cond)?;
    let keys: Vec<usize> = (0..cond.rows).collect();
    let mut mixed = Mat::zeros(x.rows, w.dim);
    for i in 0..x.rows {
        mixed.row_mut(i).copy_from_slice(&attend_row(q.row(i), &k, &v, &keys, w.heads));
    }
    w.out.forward(&mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn singleton_window_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = AttentionWeights::init(8, 8, 2, &mut rng).unwrap();
        let x = random_mat(&mut rng, 2, 8);
        let coords = [VoxelCoord::new(0, 0, 0), VoxelCoord::new(20, 20, 20)];
        let out = windowed_mhsa(&x, &coords, &w, &WindowConfig::default()).unwrap();
        for i in 0..2 {
            let want = w.out.apply(&w.v.apply(x.row(i)));
            for (a, b) in out.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_window_equals_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = AttentionWeights::init(12, 12, 3, &mut rng).unwrap();
        let x = random_mat(&mut rng, 30, 12);
        let coords: Vec<_> = (0..30).map(|i| VoxelCoord::from_linear(i, 4)).collect();
        let a = windowed_mhsa(&x, &coords, &w, &WindowConfig::default()).unwrap();
        let b = self_attention(&x, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
        assert!(windowed_mhsa(&x, &coords[..3], &w, &WindowConfig::default()).is_err());
    }

    #[test]
    fn cross_attention_singleton_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = AttentionWeights::init(8, 6, 2, &mut rng).unwrap();
        let x = random_mat(&mut rng, 5, 8);
        let c1 = random_mat(&mut rng, 1, 6);
        let out = cross_attention(&x, &c1, &w).unwrap();
        let want = w.out.apply(&w.v.apply(c1.row(0)));
        for i in 0..5 {
            for (a, b) in out.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let c = random_mat(&mut rng, 4, 6);
        let mut dup = c.clone();
        dup.data.extend_from_slice(&c.data);
        dup.rows *= 2;
        let a = cross_attention(&x, &c, &w).unwrap();
        let b = cross_attention(&x, &dup, &w).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        assert!(cross_attention(&x, &Mat::zeros(0, 6), &w).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..40 {
            let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            softmax(&mut s);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
