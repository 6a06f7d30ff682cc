use rand::Rng;

use crate::error::{Error, Result};

/// Lower bound on every mixture scale, in target units.
pub const SCALE_FLOOR: f64 = 1e-3;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// Affine map from per-step features to mixture logits, normalized means and
/// log-scales: `K (1 + 2 d)` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnHeadParams {
    pub components: usize,
    pub output: usize,
    pub features: usize,
    /// `K (1 + 2d) x features`, row-major. Rows: logits, then means, then log-scales.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl MdnHeadParams {
    pub fn raw_outputs(components: usize, output: usize) -> usize {
        components * (1 + 2 * output)
    }

    pub fn zeros(components: usize, output: usize, features: usize) -> Self {
        let p = Self::raw_outputs(components, output);
        Self {
            components,
            output,
            features,
            w: vec![0.0; p * features],
            b: vec![0.0; p],
        }
    }

    pub fn random(components: usize, output: usize, features: usize, rng: &mut impl Rng) -> Self {
        let mut head = Self::zeros(components, output, features);
        let s = 1.0 / (features as f64).sqrt();
        head.w.iter_mut().for_each(|v| *v = rng.random_range(-s..s));
        // spread the component means so they do not start identical
        for k in 0..components {
            for j in 0..output {
                head.b[components + k * output + j] = rng.random_range(-1.0..1.0);
            }
        }
        head
    }

    pub fn validate(&self) -> Result<()> {
        let p = Self::raw_outputs(self.components, self.output);
        if self.components == 0 || self.output == 0 {
            return Err(Error::InvalidParameter("mixture needs K >= 1 and d >= 1".into()));
        }
        if self.w.len() != p * self.features || self.b.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "head has {}/{} values, expected {}x{} and {}",
                self.w.len(),
                self.b.len(),
                p,
                self.features,
                p
            )));
        }
        Ok(())
    }
}

/// Per-step Gaussian mixtures with diagonal covariance, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSeq {
    pub steps: usize,
    pub components: usize,
    pub output: usize,
    /// `steps x K`
    pub weights: Vec<f64>,
    /// `steps x K x d`
    pub means: Vec<f64>,
    /// `steps x K x d`
    pub scales: Vec<f64>,
}

impl MixtureSeq {
    /// Mixture mean and per-axis standard deviation at step `t`.
    pub fn moments(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let (k_n, d) = (self.components, self.output);
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for k in 0..k_n {
            let pi = self.weights[t * k_n + k];
            for j in 0..d {
                let i = (t * k_n + k) * d + j;
                mean[j] += pi * self.means[i];
                second[j] += pi * (self.scales[i] * self.scales[i] + self.means[i] * self.means[i]);
            }
        }
        let std = mean.iter().zip(&second).map(|(m, s)| (s - m * m).max(0.0).sqrt()).collect();
        (mean, std)
    }
}

/// Component log-terms `log π_k + Σ_j log N(f_j; μ_kj, σ_kj²)` at step `t`.
pub(crate) fn component_logs(mix: &MixtureSeq, t: usize, f: &[f64], out: &mut [f64]) {
    let (k_n, d) = (mix.components, mix.output);
    for k in 0..k_n {
        let mut a = mix.weights[t * k_n + k].ln();
        for j in 0..d {
            let i = (t * k_n + k) * d + j;
            let u = (f[j] - mix.means[i]) / mix.scales[i];
            a -= HALF_LN_TAU + mix.scales[i].ln() + 0.5 * u * u;
        }
        out[k] = a;
    }
}

pub(crate) fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−Σ_t log Σ_k π_k Π_j N(F_tj; μ_kj, σ_kj²)` over a `steps x d` force window.
pub fn window_nll(mix: &MixtureSeq, forces: &[f64]) -> Result<f64> {
    if forces.len() != mix.steps * mix.output {
        return Err(Error::ShapeMismatch(format!(
            "force window has {} values, expected {}x{}",
            forces.len(),
            mix.steps,
            mix.output
        )));
    }
    let mut logs = vec![0.0; mix.components];
    let mut nll = 0.0;
    for t in 0..mix.steps {
        component_logs(mix, t, &forces[t * mix.output..(t + 1) * mix.output], &mut logs);
        nll -= log_sum_exp(&logs);
    }
    Ok(nll)
}

/// Turn raw head outputs for one step into mixture parameters.
pub(crate) fn activate(
    raw: &[f64],
    components: usize,
    output: usize,
    target_mean: &[f64],
    target_std: &[f64],
    weights: &mut [f64],
    means: &mut [f64],
    scales: &mut [f64],
) {
    let logits = &raw[..components];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for k in 0..components {
        weights[k] = (logits[k] - max).exp();
        total += weights[k];
    }
    weights.iter_mut().for_each(|w| *w /= total);
    for k in 0..components {
        for j in 0..output {
            let i = k * output + j;
            means[i] = target_mean[j] + target_std[j] * raw[components + i];
            scales[i] = SCALE_FLOOR + target_std[j] * raw[components + components * output + i].exp();
        }
    }
}

/// Gradient of one step's `−log Σ_k …` with respect to the raw head outputs.
pub(crate) fn step_raw_gradient(mix: &MixtureSeq, t: usize, f: &[f64], target_std: &[f64], logs: &mut [f64], draw: &mut [f64]) {
    let (k_n, d) = (mix.components, mix.output);
    component_logs(mix, t, f, logs);
    let lse = log_sum_exp(logs);
    for k in 0..k_n {
        let gamma = (logs[k] - lse).exp();
        draw[k] = mix.weights[t * k_n + k] - gamma;
        for j in 0..d {
            let i = (t * k_n + k) * d + j;
            let (mu, sigma) = (mix.means[i], mix.scales[i]);
            let diff = f[j] - mu;
            let inv = 1.0 / sigma;
            draw[k_n + k * d + j] = -gamma * diff * inv * inv * target_std[j];
            draw[k_n + k_n * d + k * d + j] = -gamma * (diff * diff * inv * inv * inv - inv) * (sigma - SCALE_FLOOR);
        }
    }
}
