//! Bidirectional GRU with a mixture-density head, predicting a per-step
//! Gaussian mixture over the force window from the velocity window.

mod container;
mod gru;
mod mdn;
mod train;

pub use container::{load_container, save_container, Container, NamedArray, CONTAINER_VERSION};
pub use gru::{gru_cell, GruDirectionParams};
pub use mdn::{window_nll, MdnHeadParams, MixtureSeq, SCALE_FLOOR};
pub use train::{gradients, gradients_sum, train, train_with_norm, AdamState, TrainReport, TrainingConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use gru::{backprop_direction, run_direction, DirectionCache, GRU_TENSORS};
use mdn::{activate, log_sum_exp, step_raw_gradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub hidden: usize,
    pub components: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub window: usize,
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.components == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidParameter(format!("model sizes must be positive: {self:?}")));
        }
        if self.window < 2 {
            return Err(Error::InvalidParameter("window length must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-channel affine normalization of inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn channel_stats(data: impl Iterator<Item = f64> + Clone, dims: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dims];
    let mut count = 0usize;
    for (i, v) in data.clone().enumerate() {
        mean[i % dims] += v;
        count += 1;
    }
    let rows = (count / dims).max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; dims];
    for (i, v) in data.enumerate() {
        var[i % dims] += (v - mean[i % dims]).powi(2);
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / rows).sqrt();
            // a constant channel carries no scale information
            if s > 1e-9 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Normalization {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            target_mean: vec![0.0; output_dim],
            target_std: vec![1.0; output_dim],
        }
    }

    pub fn fit(windows: &[Window], input_dim: usize, output_dim: usize) -> Self {
        let (input_mean, input_std) = channel_stats(windows.iter().flat_map(|w| w.velocity.iter().copied()), input_dim);
        let (target_mean, target_std) = channel_stats(windows.iter().flat_map(|w| w.force.iter().copied()), output_dim);
        Self {
            input_mean,
            input_std,
            target_mean,
            target_std,
        }
    }

    pub fn normalize_inputs(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.input_mean.len();
        raw.iter().enumerate().map(|(i, v)| (v - self.input_mean[i % d]) / self.input_std[i % d]).collect()
    }

    pub fn denormalize_inputs(&self, normalized: &[f64]) -> Vec<f64> {
        let d = self.input_mean.len();
        normalized.iter().enumerate().map(|(i, v)| v * self.input_std[i % d] + self.input_mean[i % d]).collect()
    }

    fn validate(&self, hyper: &ModelHyper) -> Result<()> {
        if self.input_mean.len() != hyper.input_dim
            || self.input_std.len() != hyper.input_dim
            || self.target_mean.len() != hyper.output_dim
            || self.target_std.len() != hyper.output_dim
        {
            return Err(Error::ShapeMismatch("normalization does not match model dimensions".into()));
        }
        if !self.input_std.iter().chain(&self.target_std).all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// One training or scoring window: `L x d_v` velocities and `L x d` forces, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub velocity: Vec<f64>,
    pub force: Vec<f64>,
}

/// Trainable tensors; also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub forward: GruDirectionParams,
    pub backward: GruDirectionParams,
    pub head: MdnHeadParams,
}

impl Weights {
    pub fn zeros(hyper: &ModelHyper) -> Self {
        Self {
            forward: GruDirectionParams::zeros(hyper.hidden, hyper.input_dim),
            backward: GruDirectionParams::zeros(hyper.hidden, hyper.input_dim),
            head: MdnHeadParams::zeros(hyper.components, hyper.output_dim, 2 * hyper.hidden),
        }
    }

    pub fn random(hyper: &ModelHyper, rng: &mut impl Rng) -> Self {
        Self {
            forward: GruDirectionParams::random(hyper.hidden, hyper.input_dim, rng),
            backward: GruDirectionParams::random(hyper.hidden, hyper.input_dim, rng),
            head: MdnHeadParams::random(hyper.components, hyper.output_dim, 2 * hyper.hidden, rng),
        }
    }

    /// `(name, [rows, cols], values)` for every tensor in a fixed order.
    pub fn named(&self) -> Vec<(String, [usize; 2], &Vec<f64>)> {
        let mut out = Vec::with_capacity(20);
        for (prefix, dir) in [("forward", &self.forward), ("backward", &self.backward)] {
            let shapes = dir.shapes();
            for (i, t) in dir.tensors().into_iter().enumerate() {
                out.push((format!("{prefix}.{}", GRU_TENSORS[i]), shapes[i], t));
            }
        }
        let p = MdnHeadParams::raw_outputs(self.head.components, self.head.output);
        out.push(("head.w".to_string(), [p, self.head.features], &self.head.w));
        out.push(("head.b".to_string(), [p, 1], &self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(20);
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn norm(&self) -> f64 {
        self.named().iter().flat_map(|(_, _, t)| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Weights) {
        let others: Vec<&Vec<f64>> = other.named().into_iter().map(|(_, _, t)| t).collect();
        for (t, o) in self.tensors_mut().into_iter().zip(others) {
            t.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: ModelHyper,
    pub norm: Normalization,
    pub weights: Weights,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.norm.validate(&self.hyper)?;
        let w = &self.weights;
        w.forward.validate()?;
        w.backward.validate()?;
        w.head.validate()?;
        let h = &self.hyper;
        let dims_ok = w.forward.hidden == h.hidden
            && w.backward.hidden == h.hidden
            && w.forward.input == h.input_dim
            && w.backward.input == h.input_dim
            && w.head.features == 2 * h.hidden
            && w.head.components == h.components
            && w.head.output == h.output_dim;
        if !dims_ok {
            return Err(Error::ShapeMismatch("weights do not match hyperparameters".into()));
        }
        Ok(())
    }

    fn check_window(&self, velocity: &[f64], force: Option<&[f64]>) -> Result<()> {
        let h = &self.hyper;
        if velocity.len() != h.window * h.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "velocity window has {} values, expected {}x{}",
                velocity.len(),
                h.window,
                h.input_dim
            )));
        }
        if let Some(f) = force {
            if f.len() != h.window * h.output_dim {
                return Err(Error::ShapeMismatch(format!(
                    "force window has {} values, expected {}x{}",
                    f.len(),
                    h.window,
                    h.output_dim
                )));
            }
        }
        if !velocity.iter().chain(force.unwrap_or(&[])).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model input window".into()));
        }
        Ok(())
    }
}

struct ForwardPass {
    xs: Vec<f64>,
    fwd: DirectionCache,
    bwd: DirectionCache,
    features: Vec<f64>,
    mix: MixtureSeq,
}

fn forward_pass(model: &ModelParams, velocity: &[f64]) -> ForwardPass {
    let h = &model.hyper;
    let (steps, hidden) = (h.window, h.hidden);
    let xs = model.norm.normalize_inputs(velocity);
    let fwd = run_direction(&model.weights.forward, &xs, steps, false);
    let bwd = run_direction(&model.weights.backward, &xs, steps, true);
    let head = &model.weights.head;
    let (k, d) = (h.components, h.output_dim);
    let p = MdnHeadParams::raw_outputs(k, d);
    let mut features = vec![0.0; steps * 2 * hidden];
    let mut mix = MixtureSeq {
        steps,
        components: k,
        output: d,
        weights: vec![0.0; steps * k],
        means: vec![0.0; steps * k * d],
        scales: vec![0.0; steps * k * d],
    };
    let mut raw = vec![0.0; p];
    for t in 0..steps {
        let feat = &mut features[t * 2 * hidden..(t + 1) * 2 * hidden];
        feat[..hidden].copy_from_slice(&fwd.h[t * hidden..(t + 1) * hidden]);
        feat[hidden..].copy_from_slice(&bwd.h[t * hidden..(t + 1) * hidden]);
        for (o, (row, b)) in raw.iter_mut().zip(head.w.chunks_exact(2 * hidden).zip(&head.b)) {
            *o = b + row.iter().zip(feat.iter()).map(|(a, x)| a * x).sum::<f64>();
        }
        activate(
            &raw,
            k,
            d,
            &model.norm.target_mean,
            &model.norm.target_std,
            &mut mix.weights[t * k..(t + 1) * k],
            &mut mix.means[t * k * d..(t + 1) * k * d],
            &mut mix.scales[t * k * d..(t + 1) * k * d],
        );
    }
    ForwardPass {
        xs,
        fwd,
        bwd,
        features,
        mix,
    }
}

/// Per-step mixture over the force window given a raw velocity window.
pub fn forward(model: &ModelParams, velocity: &[f64]) -> Result<MixtureSeq> {
    model.validate()?;
    model.check_window(velocity, None)?;
    Ok(forward_pass(model, velocity).mix)
}

/// Window NLL and its gradient, accumulated into `grad`.
pub(crate) fn window_gradient(model: &ModelParams, window: &Window, grad: &mut Weights) -> Result<f64> {
    model.check_window(&window.velocity, Some(&window.force))?;
    let h = &model.hyper;
    let (steps, hidden, k, d) = (h.window, h.hidden, h.components, h.output_dim);
    let pass = forward_pass(model, &window.velocity);
    let p = MdnHeadParams::raw_outputs(k, d);
    let features = 2 * hidden;
    let mut logs = vec![0.0; k];
    let mut draw = vec![0.0; p];
    let mut dh_fwd = vec![0.0; steps * hidden];
    let mut dh_bwd = vec![0.0; steps * hidden];
    let mut nll = 0.0;
    let head = &model.weights.head;
    for t in 0..steps {
        let f = &window.force[t * d..(t + 1) * d];
        step_raw_gradient(&pass.mix, t, f, &model.norm.target_std, &mut logs, &mut draw);
        nll -= log_sum_exp(&logs);
        let feat = &pass.features[t * features..(t + 1) * features];
        for (o, g) in draw.iter().enumerate() {
            grad.head.b[o] += g;
            let row = &mut grad.head.w[o * features..(o + 1) * features];
            row.iter_mut().zip(feat).for_each(|(w, x)| *w += g * x);
            let wrow = &head.w[o * features..(o + 1) * features];
            for i in 0..hidden {
                dh_fwd[t * hidden + i] += g * wrow[i];
                dh_bwd[t * hidden + i] += g * wrow[hidden + i];
            }
        }
    }
    backprop_direction(&model.weights.forward, &pass.xs, &pass.fwd, &dh_fwd, steps, false, &mut grad.forward);
    backprop_direction(&model.weights.backward, &pass.xs, &pass.bwd, &dh_bwd, steps, true, &mut grad.backward);
    Ok(nll)
}

/// `log p` of the force window under one model.
pub fn log_density(model: &ModelParams, velocity: &[f64], force: &[f64]) -> Result<f64> {
    model.check_window(velocity, Some(force))?;
    Ok(-window_nll(&forward(model, velocity)?, force)?)
}

/// Sum-rule ensemble score `log((1/M) Σ_m exp(log p_m))` plus every `log p_m`.
pub fn ensemble_scores(models: &[ModelParams], velocity: &[f64], force: &[f64]) -> Result<(f64, Vec<f64>)> {
    if models.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let first = &models[0].hyper;
    if models.iter().any(|m| m.hyper.window != first.window || m.hyper.input_dim != first.input_dim || m.hyper.output_dim != first.output_dim) {
        return Err(Error::ShapeMismatch("ensemble members disagree on window or dimensions".into()));
    }
    let per_model = models.iter().map(|m| log_density(m, velocity, force)).collect::<Result<Vec<_>>>()?;
    Ok((log_mean_exp(&per_model), per_model))
}

pub fn ensemble_log_density(models: &[ModelParams], velocity: &[f64], force: &[f64]) -> Result<f64> {
    Ok(ensemble_scores(models, velocity, force)?.0)
}

/// Mean and standard deviation per output axis of the equal-weight mixture of
/// every model's prediction at `step`.
pub fn ensemble_moments(models: &[ModelParams], velocity: &[f64], step: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if models.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let d = models[0].hyper.output_dim;
    let (mut mean, mut second) = (vec![0.0; d], vec![0.0; d]);
    for m in models {
        let mix = forward(m, velocity)?;
        if step >= mix.steps || mix.output != d {
            return Err(Error::ShapeMismatch(format!("step {step} outside a {}-step prediction", mix.steps)));
        }
        let (mu, sd) = mix.moments(step);
        for j in 0..d {
            mean[j] += mu[j];
            second[j] += sd[j] * sd[j] + mu[j] * mu[j];
        }
    }
    let n = models.len() as f64;
    let mean: Vec<f64> = mean.iter().map(|v| v / n).collect();
    let std = mean.iter().zip(&second).map(|(m, s)| (s / n - m * m).max(0.0).sqrt()).collect();
    Ok((mean, std))
}

/// `log((1/M) Σ exp(a_m))`, stable for any magnitudes.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}
