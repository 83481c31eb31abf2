use crate::error::{shape_err, Result};

/// Mean over elements of `0.5 * (exp(logvar) + mean^2 - 1 - logvar)`.
pub fn kl_penalty(mean: &[f64], logvar: &[f64]) -> Result<f64> {
    if mean.len() != logvar.len() {
        return shape_err(format!("{} means vs {} log-variances", mean.len(), logvar.len()));
    }
    if mean.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = mean.iter().zip(logvar).map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv)).sum();
    Ok(s / mean.len() as f64)
}

/// Gradients of [`kl_penalty`] with respect to `mean` and `logvar`.
pub fn kl_penalty_grad(mean: &[f64], logvar: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mean.len() != logvar.len() {
        return shape_err(format!("{} means vs {} log-variances", mean.len(), logvar.len()));
    }
    let n = mean.len().max(1) as f64;
    Ok((
        mean.iter().map(|m| m / n).collect(),
        logvar.iter().map(|lv| 0.5 * (lv.exp() - 1.0) / n).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(kl_penalty(&[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert!((kl_penalty(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_penalty(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn nonnegative() {
        for m in [-2.0, -0.3, 0.0, 1.5] {
            for lv in [-3.0, -0.1, 0.0, 2.0] {
                assert!(kl_penalty(&[m], &[lv]).unwrap() >= 0.0);
            }
        }
    }
}
