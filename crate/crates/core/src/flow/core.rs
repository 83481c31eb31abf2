use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result, SlatError};
use crate::numeric::sigmoid;

/// `(1 - t) * x0 + t * eps`.
pub fn interpolate(x0: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return shape_err(format!("data has {} values, noise {}", x0.len(), eps.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(SlatError::OutOfRange(format!("timestep {t} outside [0, 1]")));
    }
    Ok(x0.iter().zip(eps).map(|(a, e)| (1.0 - t) * a + t * e).collect())
}

/// Regression target of the flow-matching objective, `eps - x0`.
pub fn cfm_target(x0: &[f64], eps: &[f64]) -> Vec<f64> {
    eps.iter().zip(x0).map(|(e, a)| e - a).collect()
}

/// Mean squared error between a predicted velocity and `eps - x0`.
pub fn velocity_mse(v: &[f64], x0: &[f64], eps: &[f64]) -> Result<f64> {
    if v.len() != x0.len() || x0.len() != eps.len() {
        return shape_err("velocity, data and noise lengths differ");
    }
    if v.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = v.iter().zip(x0.iter().zip(eps)).map(|(v, (a, e))| (v - (e - a)).powi(2)).sum();
    Ok(s / v.len() as f64)
}

/// Logit-normal timestep distribution `sigmoid(mu + sigma * z)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogitNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogitNormal {
    fn default() -> Self {
        Self { mu: crate::defaults::TIMESTEP_MU, sigma: crate::defaults::TIMESTEP_SIGMA }
    }
}

impl LogitNormal {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        sample_timestep_from(self.mu, self.sigma, z)
    }
}

/// Maps a standard normal draw to a timestep, kept strictly inside (0, 1).
pub fn sample_timestep_from(mu: f64, sigma: f64, z: f64) -> f64 {
    sigmoid(mu + sigma * z).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

pub fn sample_timestep(mu: f64, sigma: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(SlatError::OutOfRange(format!("timestep sigma must be positive, got {sigma}")));
    }
    Ok(LogitNormal { mu, sigma }.sample(rng))
}

/// Classifier-free guidance: `v_uncond + strength * (v_cond - v_uncond)`.
pub fn cfg_velocity(v_cond: &[f64], v_uncond: &[f64], strength: f64) -> Result<Vec<f64>> {
    if v_cond.len() != v_uncond.len() {
        return shape_err("conditional and unconditional velocities differ in length");
    }
    Ok(v_cond.iter().zip(v_uncond).map(|(c, u)| u + strength * (c - u)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn interpolation_cases() {
        let x0 = [0.0, 4.0];
        let e = [4.0, 0.0];
        assert_eq!(interpolate(&x0, &e, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &e, 1.0).unwrap(), e);
        assert_eq!(interpolate(&x0, &e, 0.25).unwrap(), vec![1.0, 3.0]);
        assert_eq!(interpolate(&x0, &x0, 0.7).unwrap(), x0);
        assert!(interpolate(&x0, &[1.0], 0.5).is_err());
        assert!(interpolate(&x0, &e, 1.5).is_err());
    }

    #[test]
    fn guidance_cases() {
        let c = [1.0, 2.0];
        let u = [0.0, 0.0];
        assert_eq!(cfg_velocity(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_velocity(&c, &u, 0.0).unwrap(), u);
        assert_eq!(cfg_velocity(&c, &u, 3.0).unwrap(), vec![3.0, 6.0]);
        assert_eq!(cfg_velocity(&c, &c, 7.5).unwrap(), c);
    }

    #[test]
    fn timesteps_inside_unit_interval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let t = sample_timestep(1.0, 1.0, &mut rng).unwrap();
            assert!(t > 0.0 && t < 1.0);
        }
        assert!((sample_timestep_from(0.0, 1e-12, 0.3) - 0.5).abs() < 1e-12);
        assert!(sample_timestep_from(0.0, 1.0, 1e3) < 1.0);
        assert!(sample_timestep(0.0, 0.0, &mut rng).is_err());
    }
}
