//! Denoising score matching objective, Adam, and the epoch loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cast, save_checkpoint, Architecture, Scalar, ScoreModel, ScoreNet};
use crate::barrier::TrajectorySample;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

/// Diffusion time and standard normal noise for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmDraw {
    pub t: f64,
    pub noise: Vec<f64>,
}

pub fn dsm_draws(count: usize, dim: usize, t_min: f64, rng: &mut impl Rng) -> Result<Vec<DsmDraw>> {
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(Error::InvalidArgument(format!("t_min must lie in (0, 1), got {t_min}")));
    }
    Ok((0..count)
        .map(|_| {
            let t = rng.random_range(t_min..=1.0);
            let noise = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            DsmDraw { t, noise }
        })
        .collect())
}

/// `x_t`, the target score and the weight `lambda = 1 - beta_bar^2`.
fn perturb(schedule: &NoiseSchedule, x0: &[f64], draw: &DsmDraw) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if x0.len() != draw.noise.len() {
        return Err(Error::LengthMismatch {
            expected: x0.len(),
            got: draw.noise.len(),
        });
    }
    let bb = schedule.beta_bar(draw.t)?;
    let var = schedule.marginal_variance(draw.t)?;
    let sd = var.sqrt();
    let xt: Vec<f64> = x0.iter().zip(&draw.noise).map(|(&x, &z)| bb * x + sd * z).collect();
    let target = xt.iter().zip(x0).map(|(&x, &m)| -(x - bb * m) / var).collect();
    Ok((xt, target, var))
}

fn check_batch(batch: &[&[f64]], draws: &[DsmDraw]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: draws.len(),
        });
    }
    Ok(())
}

/// Weighted loss for any score model, without gradients.
pub fn dsm_loss_value(model: &dyn ScoreModel, schedule: &NoiseSchedule, batch: &[&[f64]], draws: &[DsmDraw]) -> Result<f64> {
    check_batch(batch, draws)?;
    let mut total = 0.0;
    for (x0, d) in batch.iter().zip(draws) {
        let (xt, target, lambda) = perturb(schedule, x0, d)?;
        let s = model.score(&xt, d.t)?;
        total += lambda * s.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Batch loss of the network; its parameter gradient is added to `grad`.
pub fn dsm_loss<T: Scalar>(net: &ScoreNet<T>, batch: &[&[f64]], draws: &[DsmDraw], grad: &mut [T]) -> Result<f64> {
    check_batch(batch, draws)?;
    if grad.len() != net.param_count() {
        return Err(Error::LengthMismatch {
            expected: net.param_count(),
            got: grad.len(),
        });
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x0, d) in batch.iter().zip(draws) {
        let (xt, target, lambda) = perturb(net.schedule(), x0, d)?;
        let xt: Vec<T> = xt.iter().map(|&v| cast(v)).collect();
        let (s, cache) = net.forward_cached(&xt, d.t)?;
        let scale = 2.0 * lambda * inv_b;
        let mut dout = Vec::with_capacity(s.len());
        for (&si, &ti) in s.iter().zip(&target) {
            let r = si.to_f64().unwrap_or(f64::NAN) - ti;
            total += lambda * r * r;
            dout.push(cast::<T>(scale * r));
        }
        if !total.is_finite() {
            return Ok(f64::NAN);
        }
        net.backward(&cache, &dout, grad);
    }
    Ok(total * inv_b)
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.step += 1;
        let b1: T = cast(self.beta1);
        let b2: T = cast(self.beta2);
        let one = T::one();
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size: T = cast(lr * c2.sqrt() / c1);
        let eps: T = cast(self.eps * c2.sqrt());
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - step_size * *m / (v.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the end of the cosine decay.
    pub lr_min: f64,
    pub t_min: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            lr: 2e-4,
            lr_min: 0.0,
            t_min: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::InvalidArgument("need 0 <= lr_min <= lr, lr > 0".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::InvalidArgument(format!("t_min must lie in (0, 1), got {}", self.t_min)));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.lr;
        }
        let frac = step as f64 / total as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(epoch, mean_loss)`, epochs counted from 1.
    pub history: Vec<(usize, f64)>,
    pub steps: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn write_history(&self, path: impl AsRef<Path>) -> Result<()> {
        write_history(&self.history, path)
    }
}

pub fn write_history(history: &[(usize, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_loss"])?;
    for (e, l) in history {
        w.write_record([e.to_string(), format!("{l:.9e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Digest of everything that determines a trained network: training data,
/// architecture, schedule, optimizer settings and initialization seed.
pub fn model_digest(data_digest: &str, arch: &Architecture, schedule: &NoiseSchedule, cfg: &TrainConfig, init_seed: u64) -> String {
    let cfg = TrainConfig {
        checkpoint_every: 0,
        checkpoint_dir: None,
        ..cfg.clone()
    };
    let key = serde_json::json!({
        "data": data_digest,
        "architecture": arch,
        "schedule": schedule,
        "train": cfg,
        "init_seed": init_seed,
    });
    crate::data::sha256_hex(key.to_string().as_bytes())
}

/// Trains in place. `on_epoch` sees the network after every epoch.
pub fn train_with(
    net: &mut ScoreNet<f32>,
    data: &[TrajectorySample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ScoreNet<f32>, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport {
        history: Vec::new(),
        steps: 0,
        checkpoints: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let dim = data[0].data.len();
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.param_count());
    let mut grad = vec![0f32; net.param_count()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_good = net.params().to_vec();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].data.as_slice()).collect();
            let draws = dsm_draws(batch.len(), dim, cfg.t_min, &mut rng)?;
            grad.fill(0.0);
            let loss = dsm_loss(net, &batch, &draws, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                net.params_mut().copy_from_slice(&last_good);
                log::warn!("training diverged in epoch {epoch}; restored epoch {} weights", epoch - 1);
                return Err(Error::Diverged { epoch });
            }
            let lr = cfg.learning_rate(report.steps, total);
            adam.step(net.params_mut(), &grad, lr);
            report.steps += 1;
            sum += loss * batch.len() as f64;
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            net.params_mut().copy_from_slice(&last_good);
            return Err(Error::Diverged { epoch });
        }
        last_good.copy_from_slice(net.params());
        let mean = sum / data.len() as f64;
        log::debug!("epoch {epoch} mean loss {mean:.6}");
        report.history.push((epoch, mean));
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
                let path = dir.join(format!("epoch_{epoch:05}.ckpt"));
                save_checkpoint(net, &path)?;
                report.checkpoints.push(path);
            }
        }
        on_epoch(epoch, net, mean);
    }
    Ok(report)
}

pub fn train(net: &mut ScoreNet<f32>, data: &[TrajectorySample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(net, data, cfg, |_, _, _| {})
}
