//! Flow-matching training of the small MLP velocity model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::core::{interpolate, velocity_mse, LogitNormal};
use super::field::VelocityModel;
use super::mlp::{CfmExample, TinyMlp};
use super::sampler::gaussian_noise;
use crate::defaults::COND_DROP_RATE;
use crate::error::{Result, SlatError};
use crate::nn::Mat;

/// Flow-matching loss of `model` at one `(x0, eps, t)` triple.
pub fn cfm_loss(model: &(impl VelocityModel + ?Sized), x0: &[f64], eps: &[f64], t: f64, cond: Option<&Mat>) -> Result<f64> {
    let x = interpolate(x0, eps, t)?;
    velocity_mse(&model.velocity(&x, t, cond)?, x0, eps)
}

/// A training datum: the clean sample, per-sample aux inputs and an
/// optional condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataItem {
    pub x0: Vec<f64>,
    pub aux: Vec<f64>,
    pub cond: Option<Vec<f64>>,
}

impl DataItem {
    pub fn point(x0: Vec<f64>) -> Self {
        Self { x0, aux: Vec::new(), cond: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// Cosine decay from `lr` down to `lr * final_lr_ratio`.
    pub final_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub timestep: LogitNormal,
    pub cond_drop: f64,
    /// Losses above this abort training.
    pub divergence: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 128,
            lr: 2e-3,
            final_lr_ratio: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            timestep: LogitNormal::default(),
            cond_drop: COND_DROP_RATE,
            divergence: 1e6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1, beta2, eps }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: TinyMlp,
    /// Batch loss per iteration.
    pub losses: Vec<f64>,
}

/// Adam on the flow-matching loss with logit-normal timesteps and
/// condition dropout. Reproducible from `cfg.seed`.
pub fn train_toy_flow(data: &[DataItem], mut model: TinyMlp, cfg: &TrainConfig) -> Result<TrainResult> {
    if data.is_empty() {
        return Err(SlatError::Empty("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(SlatError::OutOfRange("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.params();
    let mut opt = Adam::new(params.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch: Vec<CfmExample> = (0..cfg.batch)
            .map(|_| {
                let item = &data[rng.random_range(0..data.len())];
                let eps = gaussian_noise(item.x0.len(), &mut rng);
                let t = cfg.timestep.sample(&mut rng);
                let drop = item.cond.is_some() && rng.random_bool(cfg.cond_drop.clamp(0.0, 1.0));
                CfmExample {
                    x0: item.x0.clone(),
                    eps,
                    t,
                    aux: item.aux.clone(),
                    cond: if drop { None } else { item.cond.clone() },
                }
            })
            .collect();
        let (loss, grad) = model.cfm_loss_and_grad(&batch)?;
        if !loss.is_finite() || loss > cfg.divergence {
            return Err(SlatError::Diverged { iteration: it, loss });
        }
        losses.push(loss);
        let progress = it as f64 / cfg.iterations.max(1) as f64;
        let ratio = cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.update(&mut params, &grad, cfg.lr * ratio);
        model.set_params(&params)?;
    }
    Ok(TrainResult { model, losses })
}

/// Moving average of a loss trace with the given window.
pub fn moving_average(losses: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || losses.len() < window {
        return Vec::new();
    }
    losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::mlp::MlpShape;

    #[test]
    fn perfect_and_zero_models() {
        struct Exact(Vec<f64>);
        impl VelocityModel for Exact {
            fn velocity(&self, _: &[f64], _: f64, _: Option<&Mat>) -> Result<Vec<f64>> {
                Ok(self.0.clone())
            }
        }
        let x0 = [0.5, -1.0];
        let eps = [1.0, 1.0];
        assert_eq!(cfm_loss(&Exact(vec![0.5, 2.0]), &x0, &eps, 0.3, None).unwrap(), 0.0);
        let zero = Exact(vec![0.0, 0.0]);
        assert_eq!(cfm_loss(&zero, &[0.0, 0.0], &[1.0, -1.0], 0.7, None).unwrap(), 1.0);
    }

    #[test]
    fn training_is_reproducible_and_detects_divergence() {
        let data: Vec<_> = (0..10).map(|i| DataItem::point(vec![i as f64 * 0.1, 1.0])).collect();
        let shape = MlpShape { data_dim: 2, aux_dim: 0, cond_dim: 0, hidden: vec![8] };
        let net = TinyMlp::init(shape, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig { iterations: 30, batch: 16, ..Default::default() };
        let a = train_toy_flow(&data, net.clone(), &cfg).unwrap();
        let b = train_toy_flow(&data, net.clone(), &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model, b.model);
        let bad = TrainConfig { divergence: 1e-9, ..cfg };
        assert!(matches!(train_toy_flow(&data, net.clone(), &bad), Err(SlatError::Diverged { iteration: 0, .. })));
        assert!(train_toy_flow(&[], net, &cfg).is_err());
    }
}
