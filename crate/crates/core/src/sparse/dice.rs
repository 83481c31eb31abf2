use super::DenseBinaryGrid;
use crate::error::{Result, SlatError};

/// Smoothing added to both numerator and denominator so that an empty
/// prediction against an empty target scores a loss of exactly zero.
pub const DICE_EPS: f64 = 1e-8;

fn check(pred: &[f64], target: &DenseBinaryGrid) -> Result<()> {
    if pred.len() != target.values().len() {
        return Err(SlatError::Shape(format!(
            "prediction has {} cells, target {}",
            pred.len(),
            target.values().len()
        )));
    }
    if let Some(p) = pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(SlatError::OutOfRange(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn sums(pred: &[f64], target: &DenseBinaryGrid) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    for (&p, &t) in pred.iter().zip(target.values()) {
        psum += p;
        if t {
            inter += p;
            tsum += 1.0;
        }
    }
    (inter, psum, tsum)
}

/// Soft Dice loss `1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`, in `[0, 1]`.
pub fn dice_loss(pred: &[f64], target: &DenseBinaryGrid) -> Result<f64> {
    check(pred, target)?;
    let (inter, psum, tsum) = sums(pred, target);
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (psum + tsum + DICE_EPS))
}

/// Analytic gradient of [`dice_loss`] with respect to every prediction.
pub fn dice_loss_grad(pred: &[f64], target: &DenseBinaryGrid) -> Result<Vec<f64>> {
    check(pred, target)?;
    let (inter, psum, tsum) = sums(pred, target);
    let num = 2.0 * inter + DICE_EPS;
    let den = psum + tsum + DICE_EPS;
    Ok(target
        .values()
        .iter()
        .map(|&t| {
            let dnum = if t { 2.0 } else { 0.0 };
            -(dnum * den - num) / (den * den)
        })
        .collect())
}
