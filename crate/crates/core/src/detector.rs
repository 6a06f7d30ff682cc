//! Anomaly detection on the force predictive model: sliding velocity/force
//! queues, ensemble scoring, a windowed abnormal score and mode switching
//! with hysteresis.

use std::collections::VecDeque;

use log::info;
use serde::{Deserialize, Serialize};

use crate::control::ControlMode;
use crate::error::{Error, Result};
use crate::model::{ensemble_scores, train_with_norm, ModelParams, Normalization, TrainReport, TrainingConfig, Window};

/// Local-frame velocity channels `(v_t, v_n, ω)`.
pub const VELOCITY_DIM: usize = 3;
/// Local-frame force channels `(F_t, F_n)`.
pub const FORCE_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub window_len: usize,
    /// Number of detector ticks summed into the abnormal score.
    pub ring_len: usize,
    /// Control ticks per detector tick.
    pub decimation: usize,
    /// Fixed threshold; takes precedence over calibration.
    pub threshold: Option<f64>,
    /// Calibration record written by `calibrate`.
    pub threshold_file: Option<std::path::PathBuf>,
    /// Safety factor `k` in `θ = mean − k · std`. Also applied to the
    /// statistics of `threshold_file`, so scenarios can share one record.
    pub calibration_k: f64,
    /// Hysteresis margin as a fraction of `|θ|`.
    pub hysteresis_fraction: f64,
    /// Detector ticks after the ring fills before decisions are made.
    pub warmup_ticks: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_len: 20,
            ring_len: 30,
            decimation: 33,
            threshold: None,
            threshold_file: None,
            calibration_k: 6.0,
            hysteresis_fraction: 0.1,
            warmup_ticks: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.ring_len == 0 || self.decimation == 0 {
            return Err(Error::InvalidParameter("detector needs window_len >= 2, ring_len >= 1, decimation >= 1".into()));
        }
        if !(self.hysteresis_fraction >= 0.0) || !(self.calibration_k >= 0.0) {
            return Err(Error::InvalidParameter("hysteresis and calibration factor must be non-negative".into()));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::InvalidParameter("threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

/// The last `L` local-frame velocity and force samples.
#[derive(Debug, Clone)]
pub struct WindowBuffers {
    capacity: usize,
    velocity: VecDeque<[f64; VELOCITY_DIM]>,
    force: VecDeque<[f64; FORCE_DIM]>,
}

impl WindowBuffers {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            velocity: VecDeque::with_capacity(capacity),
            force: VecDeque::with_capacity(capacity),
        }
    }

    pub fn filled(&self) -> usize {
        self.velocity.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_ready(&self) -> bool {
        self.filled() == self.capacity
    }

    /// Push one sample into both queues; returns whether they are full.
    pub fn push_sample(&mut self, velocity: [f64; VELOCITY_DIM], force: [f64; FORCE_DIM]) -> Result<bool> {
        if !velocity.iter().chain(&force).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("detector sample".into()));
        }
        if self.is_ready() {
            self.velocity.pop_front();
            self.force.pop_front();
        }
        self.velocity.push_back(velocity);
        self.force.push_back(force);
        Ok(self.is_ready())
    }

    /// Oldest-first `L x d` windows, row-major.
    pub fn window(&self) -> Result<Window> {
        if !self.is_ready() {
            return Err(Error::NotReady {
                filled: self.filled(),
                capacity: self.capacity,
            });
        }
        Ok(Window {
            velocity: self.velocity.iter().flatten().copied().collect(),
            force: self.force.iter().flatten().copied().collect(),
        })
    }
}

/// Ensemble score of the buffered window and the per-model log-densities.
pub fn compute_score(models: &[ModelParams], buffers: &WindowBuffers) -> Result<(f64, Vec<f64>)> {
    let w = buffers.window()?;
    ensemble_scores(models, &w.velocity, &w.force)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    ring: VecDeque<f64>,
    ring_len: usize,
    pub abnormal_score: f64,
    pub threshold: f64,
    pub hysteresis: f64,
    pub period: f64,
    pub mode: ControlMode,
    pub t0: f64,
}

impl DetectorState {
    pub fn new(ring_len: usize, period: f64, threshold: f64, hysteresis_fraction: f64) -> Self {
        Self {
            ring: VecDeque::with_capacity(ring_len),
            ring_len,
            abnormal_score: 0.0,
            threshold,
            hysteresis: hysteresis_fraction * threshold.abs(),
            period,
            mode: ControlMode::Normal,
            t0: 0.0,
        }
    }

    pub fn ring_full(&self) -> bool {
        self.ring.len() == self.ring_len
    }

    pub fn ring(&self) -> impl Iterator<Item = &f64> {
        self.ring.iter()
    }

    /// Push a score and recompute `A = Δt_det · Σ ring` from the ring.
    pub fn update_abnormal_score(&mut self, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite("detector score".into()));
        }
        if self.ring.len() == self.ring_len {
            self.ring.pop_front();
        }
        self.ring.push_back(score);
        self.abnormal_score = self.period * self.ring.iter().sum::<f64>();
        Ok(())
    }

    /// Apply the threshold rules with hysteresis and return the new mode.
    pub fn decide_mode(&mut self, gains_recovered: bool, t: f64) -> ControlMode {
        let a = self.abnormal_score;
        let next = match self.mode {
            ControlMode::Normal if a < self.threshold => ControlMode::Adaptive,
            ControlMode::Adaptive if a >= self.threshold + self.hysteresis => ControlMode::Recovery,
            ControlMode::Recovery if a < self.threshold => ControlMode::Adaptive,
            ControlMode::Recovery if gains_recovered => ControlMode::Normal,
            mode => mode,
        };
        if next != self.mode {
            info!("t = {t:.3} s: {} -> {} (A = {a:.3}, threshold {:.3})", self.mode, next, self.threshold);
            self.mode = next;
            self.t0 = t;
        }
        next
    }
}

/// Windowed sums `Δt_det · Σ` over every run of `ring_len` consecutive scores.
pub fn windowed_sums(scores: &[f64], ring_len: usize, period: f64) -> Vec<f64> {
    if scores.len() < ring_len || ring_len == 0 {
        return Vec::new();
    }
    scores.windows(ring_len).map(|w| period * w.iter().sum::<f64>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub mean: f64,
    pub std: f64,
    pub k: f64,
    pub samples: usize,
}

impl Calibration {
    /// Threshold for another safety factor from the same statistics.
    pub fn threshold_at(&self, k: f64) -> f64 {
        self.mean - k * self.std
    }
}

/// `θ = mean − k · std` of the windowed sums of a clean run's scores.
pub fn calibrate_threshold(scores: &[f64], ring_len: usize, period: f64, k: f64) -> Result<Calibration> {
    if scores.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut sums = windowed_sums(scores, ring_len, period);
    if sums.is_empty() {
        // shorter than one ring: use the full partial sum
        sums.push(period * scores.iter().sum::<f64>());
    }
    let n = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / n;
    let std = (sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Calibration {
        threshold: mean - k * std,
        mean,
        std,
        k,
        samples: sums.len(),
    })
}

/// One detector-rate sample of a recorded run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSample {
    pub velocity: [f64; VELOCITY_DIM],
    pub force: [f64; FORCE_DIM],
    pub mode: ControlMode,
    /// Whether a scripted perturbation was active.
    pub perturbed: bool,
}

/// Stride-1 windows of `len` consecutive samples.
pub fn harvest_windows<'a>(samples: impl IntoIterator<Item = &'a DetectorSample>, len: usize) -> Vec<Window> {
    let samples: Vec<&DetectorSample> = samples.into_iter().collect();
    if samples.len() < len {
        return Vec::new();
    }
    samples
        .windows(len)
        .map(|w| Window {
            velocity: w.iter().flat_map(|s| s.velocity).collect(),
            force: w.iter().flat_map(|s| s.force).collect(),
        })
        .collect()
}

/// Train one more model on the windows of a flagged run that lie entirely in
/// adaptive or recovery mode without an active perturbation, and append it.
/// An empty ensemble instead trains on every unperturbed window, which is how
/// the first model is made from a clean run.
pub fn grow_ensemble(
    mut models: Vec<ModelParams>,
    flagged: &[DetectorSample],
    window_len: usize,
    config: &TrainingConfig,
) -> Result<(Vec<ModelParams>, TrainReport)> {
    if flagged.len() < window_len {
        return Err(Error::LogTooShort {
            samples: flagged.len(),
            window: window_len,
        });
    }
    let mut windows = Vec::new();
    let mut segment: Vec<&DetectorSample> = Vec::new();
    let first = models.is_empty();
    let eligible = |s: &DetectorSample| (first || s.mode != ControlMode::Normal) && !s.perturbed;
    for s in flagged.iter().chain(std::iter::once(&DetectorSample {
        velocity: [0.0; VELOCITY_DIM],
        force: [0.0; FORCE_DIM],
        mode: ControlMode::Normal,
        // never eligible, so the last segment is flushed
        perturbed: true,
    })) {
        if eligible(s) {
            segment.push(s);
        } else {
            windows.extend(harvest_windows(segment.drain(..), window_len));
        }
    }
    if windows.is_empty() {
        return Err(Error::LogTooShort {
            samples: 0,
            window: window_len,
        });
    }
    info!("growing ensemble of {} on {} flagged windows", models.len(), windows.len());
    // the reference member's statistics keep near-constant flagged inputs
    // (e.g. a resting tool) from being blown up by a tiny fitted std
    let norm = match models.first() {
        Some(m) => m.norm.clone(),
        None => Normalization::fit(&windows, VELOCITY_DIM, FORCE_DIM),
    };
    let (model, report) = train_with_norm(&windows, window_len, norm, config)?;
    models.push(model);
    Ok((models, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn buffer_fill_and_fifo() {
        let mut b = WindowBuffers::new(3);
        assert!(!b.push_sample([1.0, 0.0, 0.0], [1.0, 0.0]).unwrap());
        assert!(!b.push_sample([2.0, 0.0, 0.0], [2.0, 0.0]).unwrap());
        assert!(matches!(b.window(), Err(Error::NotReady { filled: 2, capacity: 3 })));
        assert!(b.push_sample([3.0, 0.0, 0.0], [3.0, 0.0]).unwrap());
        assert_eq!(b.window().unwrap().velocity[0], 1.0);
        assert!(b.push_sample([4.0, 0.0, 0.0], [4.0, 0.0]).unwrap());
        let w = b.window().unwrap();
        assert_eq!(w.velocity[0], 2.0);
        assert_eq!(w.force, vec![2.0, 0.0, 3.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn abnormal_score_arithmetic() {
        let mut s = DetectorState::new(30, 0.033, -10.0, 0.1);
        for _ in 0..40 {
            s.update_abnormal_score(0.0).unwrap();
        }
        assert_eq!(s.abnormal_score, 0.0);
        for _ in 0..30 {
            s.update_abnormal_score(2.5).unwrap();
        }
        assert_relative_eq!(s.abnormal_score, 2.5 * 30.0 * 0.033, epsilon = 1e-12);
        let before = s.abnormal_score;
        s.update_abnormal_score(-1e9).unwrap();
        assert_relative_eq!(s.abnormal_score - before, 0.033 * (-1e9 - 2.5), max_relative = 1e-9);
    }

    #[test]
    fn mode_rules() {
        let mut s = DetectorState::new(1, 1.0, -100.0, 0.1);
        s.update_abnormal_score(-101.0).unwrap();
        assert_eq!(s.decide_mode(false, 1.0), ControlMode::Adaptive);
        assert_eq!(s.t0, 1.0);
        // inside the hysteresis band
        s.update_abnormal_score(-95.0).unwrap();
        assert_eq!(s.decide_mode(false, 2.0), ControlMode::Adaptive);
        s.update_abnormal_score(-90.0).unwrap();
        assert_eq!(s.decide_mode(false, 3.0), ControlMode::Recovery);
        for a in [-99.0, -92.0, -100.0, -95.0] {
            s.update_abnormal_score(a).unwrap();
            assert_eq!(s.decide_mode(false, 4.0), ControlMode::Recovery);
        }
        assert_eq!(s.decide_mode(true, 5.0), ControlMode::Normal);
        s.update_abnormal_score(-50.0).unwrap();
        assert_eq!(s.decide_mode(true, 6.0), ControlMode::Normal);
        s.update_abnormal_score(-100.5).unwrap();
        assert_eq!(s.decide_mode(false, 7.0), ControlMode::Adaptive);
    }

    #[test]
    fn recovery_falls_back_to_adaptive() {
        let mut s = DetectorState::new(1, 1.0, -100.0, 0.1);
        s.mode = ControlMode::Recovery;
        s.update_abnormal_score(-101.0).unwrap();
        assert_eq!(s.decide_mode(true, 1.0), ControlMode::Adaptive);
    }

    #[test]
    fn calibration_cases() {
        let c = calibrate_threshold(&[4.0; 10], 3, 1.0, 6.0).unwrap();
        assert_eq!(c.threshold, 12.0);
        // sums alternate between 0 and −2
        let scores = [0.0, -2.0, 0.0, -2.0];
        let c = calibrate_threshold(&scores, 1, 1.0, 6.0).unwrap();
        assert_relative_eq!(c.threshold, -7.0);
        assert!(matches!(calibrate_threshold(&[], 3, 1.0, 6.0), Err(Error::EmptyLog)));
    }

    #[test]
    fn grow_requires_a_full_window() {
        let s = DetectorSample { velocity: [0.0; 3], force: [0.0; 2], mode: ControlMode::Adaptive, perturbed: false };
        let err = grow_ensemble(Vec::new(), &[s; 5], 20, &TrainingConfig::default());
        assert!(matches!(err, Err(Error::LogTooShort { samples: 5, window: 20 })));
        let mut log = vec![s; 30];
        for (i, x) in log.iter_mut().enumerate() {
            x.perturbed = i % 10 == 0;
        }
        assert!(grow_ensemble(Vec::new(), &log, 20, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn empty_ensemble_seeds_from_normal_windows() {
        let config = TrainingConfig { hidden: 3, components: 2, epochs: 1, batch_size: 8, ..TrainingConfig::default() };
        let log: Vec<DetectorSample> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.3).sin();
                DetectorSample { velocity: [x, 0.1 * x, 0.0], force: [-10.0 + x, 0.5 * x], mode: ControlMode::Normal, perturbed: false }
            })
            .collect();
        let (first, _) = grow_ensemble(Vec::new(), &log, 10, &config).unwrap();
        assert_eq!(first.len(), 1);
        let adaptive: Vec<_> = log.iter().map(|s| DetectorSample { mode: ControlMode::Adaptive, velocity: [0.0; 3], ..*s }).collect();
        let (grown, _) = grow_ensemble(first.clone(), &adaptive, 10, &config).unwrap();
        assert_eq!(grown.len(), 2);
        assert_eq!(grown[1].norm, first[0].norm);
    }

    #[test]
    fn harvest_counts() {
        let s = DetectorSample { velocity: [0.0; 3], force: [0.0; 2], mode: ControlMode::Normal, perturbed: false };
        assert_eq!(harvest_windows(&[s; 300], 20).len(), 281);
    }

    proptest! {
        #[test]
        fn abnormal_score_is_recomputable(scores in prop::collection::vec(-1e4..1e3f64, 1..200)) {
            let mut s = DetectorState::new(30, 1.0 / 30.3, -1.0, 0.1);
            for x in &scores {
                s.update_abnormal_score(*x).unwrap();
                let direct = s.period * s.ring().sum::<f64>();
                prop_assert!((s.abnormal_score - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }

        #[test]
        fn transitions_follow_the_graph(values in prop::collection::vec((-200.0..0.0f64, prop::bool::ANY), 1..200)) {
            let mut s = DetectorState::new(3, 0.5, -60.0, 0.1);
            let mut prev = s.mode;
            for (i, (a, rec)) in values.into_iter().enumerate() {
                s.update_abnormal_score(a).unwrap();
                let m = s.decide_mode(rec, i as f64);
                prop_assert!(m == prev || ControlMode::is_valid_transition(prev, m));
                prev = m;
            }
        }
    }
}
