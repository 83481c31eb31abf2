//! Velocity models: the trait the samplers integrate, and closed-form
//! fields used as oracles.

use crate::error::{shape_err, Result};
use crate::nn::{FlowTransformer, Mat};
use crate::sparse::SparseGrid;

/// Maps `(state, t, condition)` to a velocity of the same length. `None`
/// selects the unconditional branch.
pub trait VelocityModel: Sync {
    fn velocity(&self, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>>;
}

/// Velocity model over per-voxel latents laid out on a sparse structure;
/// the state holds one `channels()`-wide row per active voxel.
pub trait LayoutVelocityModel: Sync {
    fn channels(&self) -> usize;
    fn velocity_on(&self, structure: &SparseGrid, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>>;
}

/// Binds a layout model to a fixed structure.
pub struct OnLayout<'a, M: LayoutVelocityModel + ?Sized> {
    pub model: &'a M,
    pub structure: &'a SparseGrid,
}

impl<M: LayoutVelocityModel + ?Sized> VelocityModel for OnLayout<'_, M> {
    fn velocity(&self, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>> {
        self.model.velocity_on(self.structure, x, t, cond)
    }
}

/// Applies a flat model to the whole latent vector regardless of layout.
pub struct IgnoreLayout<'a, M: VelocityModel + ?Sized> {
    pub model: &'a M,
    pub channels: usize,
}

impl<M: VelocityModel + ?Sized> LayoutVelocityModel for IgnoreLayout<'_, M> {
    fn channels(&self) -> usize {
        self.channels
    }

    fn velocity_on(&self, _: &SparseGrid, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>> {
        self.model.velocity(x, t, cond)
    }
}

impl LayoutVelocityModel for FlowTransformer {
    fn channels(&self) -> usize {
        self.config.in_channels
    }

    fn velocity_on(&self, structure: &SparseGrid, x: &[f64], t: f64, cond: Option<&Mat>) -> Result<Vec<f64>> {
        let m = Mat::new(structure.len(), self.config.in_channels, x.to_vec())?;
        Ok(self.forward(structure, &m, t, cond)?.data)
    }
}

/// State-independent field. A single value broadcasts to any length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl VelocityModel for ConstantField {
    fn velocity(&self, x: &[f64], _: f64, _: Option<&Mat>) -> Result<Vec<f64>> {
        match self.value.len() {
            1 => Ok(vec![self.value[0]; x.len()]),
            n if n == x.len() => Ok(self.value.clone()),
            n => shape_err(format!("constant field has {n} values, state {}", x.len())),
        }
    }
}

/// Exact marginal velocity when data are `N(mean, std^2 I)` and noise is
/// standard normal:
/// `v(x, t) = -m + (t - (1-t) s^2) / sigma_t^2 * (x - (1-t) m)` with
/// `sigma_t^2 = (1-t)^2 s^2 + t^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianField {
    fn coord_velocity(m: f64, s: f64, x: f64, t: f64) -> f64 {
        let var = (1.0 - t).powi(2) * s * s + t * t;
        -m + (t - (1.0 - t) * s * s) / var * (x - (1.0 - t) * m)
    }

    /// Endpoint of the exact flow from noise `x1`: `mean + std * x1`.
    pub fn exact_endpoint(&self, x1: &[f64]) -> Vec<f64> {
        self.mean.iter().zip(x1).map(|(m, z)| m + self.std * z).collect()
    }
}

impl VelocityModel for GaussianField {
    fn velocity(&self, x: &[f64], t: f64, _: Option<&Mat>) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return shape_err(format!("field has dimension {}, state {}", self.mean.len(), x.len()));
        }
        Ok(x.iter().zip(&self.mean).map(|(&x, &m)| Self::coord_velocity(m, self.std, x, t)).collect())
    }
}

/// Isotropic Gaussian mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Exact marginal velocity of a Gaussian mixture: per-component fields
/// weighted by the posterior responsibility of each component given `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureField {
    pub components: Vec<MixtureComponent>,
}

impl MixtureField {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }
}

impl VelocityModel for MixtureField {
    fn velocity(&self, x: &[f64], t: f64, _: Option<&Mat>) -> Result<Vec<f64>> {
        if self.components.iter().any(|c| c.mean.len() != x.len()) {
            return shape_err("mixture component dimension differs from state");
        }
        let d = x.len() as f64;
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let var = (1.0 - t).powi(2) * c.std * c.std + t * t;
                let r2: f64 = x.iter().zip(&c.mean).map(|(x, m)| (x - (1.0 - t) * m).powi(2)).sum();
                c.weight.ln() - 0.5 * d * var.ln() - 0.5 * r2 / var
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut v = vec![0.0; x.len()];
        for (c, wk) in self.components.iter().zip(&w) {
            for ((vi, &xi), &m) in v.iter_mut().zip(x).zip(&c.mean) {
                *vi += wk / total * GaussianField::coord_velocity(m, c.std, xi, t);
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_field_is_conditional_expectation() {
        // For x0 = m exactly (s = 0) the velocity at x_t must be eps - m
        // with eps = (x - (1-t) m) / t.
        let f = GaussianField { mean: vec![0.7, -1.2], std: 0.0 };
        let t = 0.4;
        let eps = [0.3, 2.0];
        let x: Vec<f64> = eps.iter().zip(&f.mean).map(|(e, m)| (1.0 - t) * m + t * e).collect();
        let v = f.velocity(&x, t, None).unwrap();
        for i in 0..2 {
            assert!((v[i] - (eps[i] - f.mean[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_component_mixture_matches_gaussian() {
        let g = GaussianField { mean: vec![0.5, 1.0, -2.0], std: 0.3 };
        let m = MixtureField { components: vec![MixtureComponent { weight: 1.0, mean: g.mean.clone(), std: 0.3 }] };
        let x = [0.1, -0.4, 0.9];
        for t in [0.0, 0.2, 0.9, 1.0] {
            let a = g.velocity(&x, t, None).unwrap();
            let b = m.velocity(&x, t, None).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_field_broadcasts() {
        let c = ConstantField { value: vec![2.0] };
        assert_eq!(c.velocity(&[0.0; 3], 0.5, None).unwrap(), vec![2.0; 3]);
        let c = ConstantField { value: vec![1.0, 2.0] };
        assert!(c.velocity(&[0.0; 3], 0.5, None).is_err());
    }
}
