use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{window_gradient, ModelHyper, ModelParams, Normalization, Weights, Window};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub hidden: usize,
    pub components: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub learning_rate_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            components: 3,
            learning_rate: 1e-3,
            learning_rate_decay: 1.0,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.components > 0
            && self.learning_rate > 0.0
            && self.learning_rate_decay > 0.0
            && self.learning_rate_decay <= 1.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean NLL over the whole dataset before the first update.
    pub initial_nll: f64,
    /// Mean minibatch NLL during each epoch.
    pub epoch_nll: Vec<f64>,
    /// Mean NLL over the whole dataset after training.
    pub final_nll: f64,
}

fn accumulate<'a>(model: &ModelParams, batch: impl IntoIterator<Item = &'a Window>) -> Result<(f64, Weights, usize)> {
    let mut grad = Weights::zeros(&model.hyper);
    let mut total = 0.0;
    let mut count = 0;
    for w in batch {
        total += window_gradient(model, w, &mut grad)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter("gradient batch is empty".into()));
    }
    Ok((total, grad, count))
}

/// Summed window NLL and summed gradient over `batch`, in batch order.
pub fn gradients_sum(model: &ModelParams, batch: &[Window]) -> Result<(f64, Weights)> {
    model.validate()?;
    let (total, grad, _) = accumulate(model, batch)?;
    Ok((total, grad))
}

/// Mean window NLL over `batch` and its exact gradient.
pub fn gradients(model: &ModelParams, batch: &[Window]) -> Result<(f64, Weights)> {
    let (total, mut grad) = gradients_sum(model, batch)?;
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

fn mean_nll(model: &ModelParams, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        total += super::log_density(model, &w.velocity, &w.force).map(|lp| -lp)?;
    }
    Ok(total / windows.len() as f64)
}

/// First/second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Weights,
    v: Weights,
    step: i32,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(hyper: &ModelHyper) -> Self {
        Self {
            m: Weights::zeros(hyper),
            v: Weights::zeros(hyper),
            step: 0,
        }
    }

    pub fn apply(&mut self, weights: &mut Weights, grad: &Weights, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let grads: Vec<&Vec<f64>> = grad.named().into_iter().map(|(_, _, t)| t).collect();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((w, g), m), v) in weights.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..w.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Fit a fresh model to `windows` (each `window x input_dim` / `window x output_dim`).
///
/// Minibatch Adam with global-norm clipping; the seed fixes initialization
/// and shuffling, so repeated calls give bit-identical parameters.
pub fn train(
    windows: &[Window],
    window: usize,
    input_dim: usize,
    output_dim: usize,
    config: &TrainingConfig,
) -> Result<(ModelParams, TrainReport)> {
    if windows.is_empty() {
        return Err(Error::InvalidParameter("training dataset is empty".into()));
    }
    let norm = Normalization::fit(windows, input_dim, output_dim);
    train_with_norm(windows, window, norm, config)
}

/// Like [`train`] with fixed normalization statistics, so a new ensemble
/// member can share the input scaling of the existing ones.
pub fn train_with_norm(
    windows: &[Window],
    window: usize,
    norm: Normalization,
    config: &TrainingConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::InvalidParameter("training dataset is empty".into()));
    }
    let (input_dim, output_dim) = (norm.input_mean.len(), norm.target_mean.len());
    let hyper = ModelHyper {
        hidden: config.hidden,
        components: config.components,
        input_dim,
        output_dim,
        window,
    };
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ModelParams {
        hyper,
        norm,
        weights: Weights::random(&hyper, &mut rng),
    };
    model.validate()?;
    let initial_nll = mean_nll(&model, windows)?;
    let mut adam = AdamState::new(&hyper);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_nll = Vec::with_capacity(config.epochs);
    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (total_loss, mut grad, count) = accumulate(&model, chunk.iter().map(|&i| &windows[i]))?;
            grad.scale(1.0 / count as f64);
            let loss = total_loss / count as f64;
            let norm = grad.norm();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            if norm > config.clip_norm {
                grad.scale(config.clip_norm / norm);
            }
            adam.apply(&mut model.weights, &grad, lr);
            total += loss * chunk.len() as f64;
        }
        let mean = total / windows.len() as f64;
        debug!("epoch {epoch}: mean NLL {mean:.6}");
        epoch_nll.push(mean);
        lr *= config.learning_rate_decay;
    }
    let final_nll = mean_nll(&model, windows)?;
    if !final_nll.is_finite() {
        return Err(Error::Divergence { epoch: config.epochs });
    }
    Ok((model, TrainReport { initial_nll, epoch_nll, final_nll }))
}
