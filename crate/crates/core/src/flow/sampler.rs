//! ODE samplers and masked (Repaint-style) sampling.
//!
//! The model velocity points from data to noise, so sampling walks the
//! uniform grid `t_k = 1 - k / steps` down to 0 with `x <- x - h * v`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::core::{cfg_velocity, interpolate};
use super::field::VelocityModel;
use crate::defaults::{CFG_STRENGTH, SAMPLING_STEPS};
use crate::error::{Result, SlatError};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    #[default]
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_strength: f64,
    pub method: Method,
    /// Repaint repetitions per step; 1 means plain blending.
    pub resample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: SAMPLING_STEPS, cfg_strength: CFG_STRENGTH, method: Method::Heun, resample: 1 }
    }
}

/// Values of a flow state together with their shape and timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub values: Vec<f64>,
    pub shape: Vec<usize>,
    pub t: f64,
}

impl FlowState {
    pub fn new(values: Vec<f64>, shape: Vec<usize>, t: f64) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(SlatError::Shape(format!("shape {shape:?} does not hold {} values", values.len())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(SlatError::OutOfRange(format!("timestep {t} outside [0, 1]")));
        }
        check_finite(&values, t)?;
        Ok(Self { values, shape, t })
    }
}

/// Boolean mask over a state; `true` marks entries to regenerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditMask(pub Vec<bool>);

impl EditMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }
}

fn check_finite(x: &[f64], t: f64) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(SlatError::NonFinite(format!("state entry {i} is {} at t = {t:.4}", x[i])));
    }
    Ok(())
}

/// Velocity with classifier-free guidance when a condition is present.
pub fn guided_velocity(model: &(impl VelocityModel + ?Sized), x: &[f64], t: f64, cond: Option<&Mat>, strength: f64) -> Result<Vec<f64>> {
    let v = model.velocity(x, t, cond)?;
    if v.len() != x.len() {
        return Err(SlatError::Shape(format!("model returned {} values for a {}-value state", v.len(), x.len())));
    }
    match cond {
        Some(_) if strength != 1.0 => cfg_velocity(&v, &model.velocity(x, t, None)?, strength),
        _ => Ok(v),
    }
}

/// One integration step from `t` down to `t_next`.
fn step(model: &(impl VelocityModel + ?Sized), x: &[f64], t: f64, t_next: f64, cond: Option<&Mat>, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let h = t - t_next;
    let v1 = guided_velocity(model, x, t, cond, cfg.cfg_strength)?;
    let euler: Vec<f64> = x.iter().zip(&v1).map(|(x, v)| x - h * v).collect();
    let out = match cfg.method {
        Method::Euler => euler,
        Method::Heun => {
            let v2 = guided_velocity(model, &euler, t_next, cond, cfg.cfg_strength)?;
            x.iter().zip(v1.iter().zip(&v2)).map(|(x, (a, b))| x - 0.5 * h * (a + b)).collect()
        }
    };
    check_finite(&out, t_next)?;
    Ok(out)
}

fn timestep(k: usize, steps: usize) -> f64 {
    if k == steps { 0.0 } else { 1.0 - k as f64 / steps as f64 }
}

/// Integrates from noise `x_init` at t = 1 to data at t = 0.
pub fn ode_sample(model: &(impl VelocityModel + ?Sized), x_init: &[f64], cond: Option<&Mat>, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Err(SlatError::OutOfRange("sampler needs at least one step".into()));
    }
    check_finite(x_init, 1.0)?;
    let mut x = x_init.to_vec();
    for k in 0..cfg.steps {
        x = step(model, &x, timestep(k, cfg.steps), timestep(k + 1, cfg.steps), cond, cfg)?;
    }
    Ok(x)
}

/// Draws a standard normal vector from a seeded stream.
pub fn gaussian_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Regenerates the masked entries of `x0_known` while the unmasked ones
/// follow the forward process of the known data under one fixed noise
/// draw. The initial state is that same noise draw, so an all-true mask
/// reproduces [`ode_sample`] from it. With `cfg.resample > 1` each step is
/// re-noised back to its start time and repeated.
pub fn repaint_sample(
    model: &(impl VelocityModel + ?Sized),
    x0_known: &[f64],
    mask: &EditMask,
    cond: Option<&Mat>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if mask.len() != x0_known.len() {
        return Err(SlatError::Shape(format!("mask has {} entries, state {}", mask.len(), x0_known.len())));
    }
    if cfg.steps == 0 || cfg.resample == 0 {
        return Err(SlatError::OutOfRange("sampler needs at least one step and one repetition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = gaussian_noise(x0_known.len(), &mut rng);
    if mask.count() == 0 {
        return Ok(x0_known.to_vec());
    }
    let blend = |x: &mut Vec<f64>, t: f64| -> Result<()> {
        let known = interpolate(x0_known, &eps, t)?;
        for ((xi, ki), &m) in x.iter_mut().zip(known).zip(&mask.0) {
            if !m {
                *xi = ki;
            }
        }
        Ok(())
    };
    let mut x = eps.clone();
    for k in 0..cfg.steps {
        let (t, t_next) = (timestep(k, cfg.steps), timestep(k + 1, cfg.steps));
        for u in 0..cfg.resample {
            let mut next = step(model, &x, t, t_next, cond, cfg)?;
            blend(&mut next, t_next)?;
            if u + 1 == cfg.resample {
                x = next;
                break;
            }
            // Forward-process transition from t_next back up to t.
            let a = (1.0 - t) / (1.0 - t_next);
            let sd = (t * t - a * a * t_next * t_next).max(0.0).sqrt();
            x = next.iter().map(|v| a * v + sd * rng.sample::<f64, _>(StandardNormal)).collect();
            blend(&mut x, t)?;
        }
    }
    for ((xi, &k), &m) in x.iter_mut().zip(x0_known).zip(&mask.0) {
        if !m {
            *xi = k;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::field::{ConstantField, GaussianField};

    #[test]
    fn euler_exact_on_constant_field() {
        let f = ConstantField { value: vec![0.5, -1.0, 2.0] };
        let x = [1.0, 2.0, 3.0];
        for steps in [1, 3, 50] {
            let cfg = SamplerConfig { steps, method: Method::Euler, ..Default::default() };
            let out = ode_sample(&f, &x, None, &cfg).unwrap();
            for ((o, a), c) in out.iter().zip(&x).zip(&f.value) {
                assert!((o - (a - c)).abs() < 1e-12);
            }
        }
        let cfg = SamplerConfig { steps: 0, ..Default::default() };
        assert!(ode_sample(&f, &x, None, &cfg).is_err());
    }

    #[test]
    fn heun_tracks_gaussian_flow() {
        let f = GaussianField { mean: vec![1.0, -2.0], std: 0.5 };
        let x1 = [0.3, -1.1];
        let out = ode_sample(&f, &x1, None, &SamplerConfig::default()).unwrap();
        let exact = f.exact_endpoint(&x1);
        for (a, b) in out.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn non_finite_state_aborts() {
        let f = ConstantField { value: vec![f64::INFINITY] };
        assert!(matches!(ode_sample(&f, &[0.0], None, &SamplerConfig::default()), Err(SlatError::NonFinite(_))));
    }

    #[test]
    fn repaint_degenerate_masks() {
        let f = GaussianField { mean: vec![1.0, -2.0, 0.5], std: 0.5 };
        let known = [0.1, 0.2, 0.3];
        let cfg = SamplerConfig { steps: 10, ..Default::default() };
        let none = EditMask(vec![false; 3]);
        assert_eq!(repaint_sample(&f, &known, &none, None, &cfg, 4).unwrap(), known);
        let all = EditMask(vec![true; 3]);
        let eps = gaussian_noise(3, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(repaint_sample(&f, &known, &all, None, &cfg, 4).unwrap(), ode_sample(&f, &eps, None, &cfg).unwrap());
        let some = EditMask(vec![true, false, true]);
        for r in [1, 3] {
            let out = repaint_sample(&f, &known, &some, None, &SamplerConfig { resample: r, ..cfg }, 9).unwrap();
            assert_eq!(out[1], known[1]);
        }
        assert!(repaint_sample(&f, &known, &EditMask(vec![true]), None, &cfg, 4).is_err());
    }
}
