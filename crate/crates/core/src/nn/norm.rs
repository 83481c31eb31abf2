/// Epsilon used by both layer and RMS normalization.
pub const NORM_EPS: f64 = 1e-6;

/// Layer normalization without affine parameters.
pub fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// Layer normalization followed by a per-channel affine map.
pub fn layer_norm_affine(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    layer_norm(x).into_iter().zip(gamma.iter().zip(beta)).map(|(v, (g, b))| v * g + b).collect()
}

/// RMS-normalizes each `head_dim`-wide segment of `x` in place and scales it by `gain`.
pub fn qk_rmsnorm(x: &mut [f64], gain: &[f64]) {
    let hd = gain.len();
    for head in x.chunks_mut(hd) {
        let ms = head.iter().map(|v| v * v).sum::<f64>() / hd as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        for (v, g) in head.iter_mut().zip(gain) {
            *v *= inv * g;
        }
    }
}
