//! Central finite-difference gradient checks.

use crate::error::{Result, SlatError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel: f64,
    /// `(analytic, numeric, relative error)` per coordinate.
    pub coords: Vec<(f64, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

pub fn fd_gradcheck(f: impl Fn(&[f64]) -> f64, theta: &[f64], analytic: &[f64], h: f64) -> Result<GradCheck> {
    if analytic.len() != theta.len() {
        return Err(SlatError::Shape(format!("{} gradient entries for {} parameters", analytic.len(), theta.len())));
    }
    let mut p = theta.to_vec();
    let mut coords = Vec::with_capacity(theta.len());
    let mut max_rel: f64 = 0.0;
    for i in 0..theta.len() {
        p[i] = theta[i] + h;
        let fp = f(&p);
        p[i] = theta[i] - h;
        let fm = f(&p);
        p[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(SlatError::NonFinite(format!("objective at coordinate {i}")));
        }
        let n = (fp - fm) / (2.0 * h);
        let rel = relative_error(analytic[i], n);
        max_rel = max_rel.max(rel);
        coords.push((analytic[i], n, rel));
    }
    Ok(GradCheck { max_rel, coords })
}
