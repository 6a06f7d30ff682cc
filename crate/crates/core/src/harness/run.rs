use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::evaluate::{evaluate, RunMetrics};
use super::logs::{
    write_control_log, write_dataset, write_detector_log, write_prediction_log, ControlRow, DetectorRow, PredictionRow,
};
use crate::control::{local_frame, ControlMode, Controller};
use crate::detector::{
    calibrate_threshold, harvest_windows, Calibration, DetectorSample, DetectorState, WindowBuffers, FORCE_DIM,
};
use crate::dynamics::{ee_pose, inverse_kinematics, Environment, PerturbationEvent, Plant, RobotState};
use crate::error::{Error, Result};
use crate::model::{ensemble_moments, ensemble_scores, ModelParams, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub tick: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub control: Vec<ControlRow>,
    pub detector: Vec<DetectorRow>,
    pub prediction: Vec<PredictionRow>,
    pub metrics: RunMetrics,
    /// Smallest normal force over every contact and tick.
    pub min_contact_normal_n: f64,
    pub models: usize,
    pub dof: usize,
    pub fault: Option<Fault>,
}

impl RunOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_control_log(&dir.join("control.csv"), &self.control, self.dof)?;
        write_detector_log(&dir.join("detector.csv"), &self.detector, self.models)?;
        if self.models > 0 {
            write_prediction_log(&dir.join("prediction.csv"), &self.prediction)?;
        }
        write_json(&dir.join("metrics.json"), &self.summary())
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "control_ticks": self.control.len(),
            "detector_ticks": self.detector.len(),
            "metrics": self.metrics,
            "min_contact_normal_n": self.min_contact_normal_n,
            "fault": self.fault,
        })
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_models(paths: &[PathBuf]) -> Result<Vec<ModelParams>> {
    paths.iter().map(|p| ModelParams::load(p)).collect()
}

pub fn initial_state(config: &ScenarioConfig) -> Result<RobotState> {
    let q = inverse_kinematics(&config.arm, &config.start_pose(), &config.start_seed())?;
    Ok(RobotState::at_rest(q))
}

/// Simulate the scenario with the given ensemble. A simulation fault ends the
/// run early and is reported in [`RunOutput::fault`] alongside the logs so far.
pub fn run_scenario(config: &ScenarioConfig, models: &[ModelParams]) -> Result<RunOutput> {
    config.validate()?;
    let threshold = config.resolve_threshold()?;
    let decide = config.adaptation && !models.is_empty();
    if decide && threshold.is_none() {
        return Err(Error::Config(
            "adaptation with an ensemble needs detector.threshold or detector.threshold_file".into(),
        ));
    }
    if config.adaptation && models.is_empty() {
        warn!("no predictive models: the controller stays in normal mode");
    }
    for m in models {
        if m.hyper.window != config.detector.window_len {
            return Err(Error::ShapeMismatch(format!(
                "model window {} differs from detector window {}",
                m.hyper.window, config.detector.window_len
            )));
        }
    }
    let dt = config.dt_s;
    let det = &config.detector;
    let period = det.decimation as f64 * dt;
    let threshold_value = threshold.unwrap_or(f64::NAN);

    let plant = Plant::new(config.arm.clone())?;
    let vmp = config.motion.build()?;
    let mut state = initial_state(config)?;
    let mut controller = Controller::new(config.controller.clone(), config.controller_arm(), vmp, &state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let force_noise = Normal::new(0.0, config.sensor.force_noise_n).map_err(|e| Error::Config(e.to_string()))?;
    let torque_noise = Normal::new(0.0, config.sensor.torque_noise_nm).map_err(|e| Error::Config(e.to_string()))?;

    let mut buffers = WindowBuffers::new(det.window_len);
    let mut detector = DetectorState::new(det.ring_len, period, threshold_value, det.hysteresis_fraction);
    let mut scored_since_full = 0usize;
    let mut command = ControlMode::Normal;

    let ticks = config.ticks();
    let mut control = Vec::with_capacity(ticks);
    let mut detector_log = Vec::with_capacity(ticks / det.decimation);
    let mut prediction = Vec::new();
    let mut min_normal = f64::INFINITY;
    let mut fault = None;

    for k in 0..ticks {
        let t = k as f64 * dt;
        let env = Environment {
            surface: &config.surface,
            contact: &config.contact,
            schedule: &config.perturbations,
            t,
        };
        let tick = (|| -> Result<(RobotState, ControlRow, Vector3<f64>, Vector3<f64>)> {
            let report = plant.sense(&state, &env)?;
            let noise = Vector3::new(force_noise.sample(&mut rng), force_noise.sample(&mut rng), torque_noise.sample(&mut rng));
            let measured = report.wrench + noise;
            let (tau, tel) = controller.control_tick(&state, &measured, &config.targets, command, t, dt)?;
            for f in &report.normal_forces {
                min_normal = min_normal.min(*f);
            }
            let row = ControlRow {
                tick: k,
                t,
                q: state.q.iter().copied().collect(),
                qdot: state.qdot.iter().copied().collect(),
                pose: ee_pose(&config.arm, &state.q).into(),
                twist: tel.twist.into(),
                f_e: measured.into(),
                f_d: tel.force_desired,
                alpha_hat: tel.alpha_hat,
                mu_hat: tel.mu_hat,
                v_vmp: tel.v_vmp.into(),
                v_f: tel.v_f.into(),
                v_r: tel.v_r.into(),
                v_t: tel.v_t.into(),
                v_d: tel.v_d.into(),
                f_m: tel.f_m.into(),
                tau: tau.iter().copied().collect(),
                gain_scale: tel.gain_scale,
                mode: tel.mode,
            };
            let next = plant.step(&state, &tau, &env, dt)?.state;
            let lf = tel.local_force;
            Ok((next, row, tel.local_velocity, Vector3::new(lf.x, lf.y, 0.0)))
        })();
        let (next, row, local_v, local_f) = match tick {
            Ok(v) => v,
            Err(e @ (Error::SimFault { .. } | Error::NonFinite(_) | Error::Singular { .. })) => {
                warn!("simulation fault at tick {k}: {e}");
                fault = Some(Fault {
                    tick: k,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        state = next;
        control.push(row);

        if (k + 1) % det.decimation != 0 {
            continue;
        }
        let j = detector_log.len();
        let t_det = (k + 1) as f64 * dt;
        let ready = buffers.push_sample(local_v.into(), [local_f.x, local_f.y])?;
        let mut row = DetectorRow {
            tick: j,
            t: t_det,
            score: f64::NAN,
            model_scores: vec![f64::NAN; models.len()],
            abnormal_score: f64::NAN,
            threshold: threshold_value,
            mode: command,
        };
        if ready && !models.is_empty() {
            let w = buffers.window()?;
            let (score, per_model) = ensemble_scores(models, &w.velocity, &w.force)?;
            detector.update_abnormal_score(score)?;
            row.score = score;
            row.model_scores = per_model;
            row.abnormal_score = detector.abnormal_score;
            prediction.push(predict_row(models, &w, j, t_det)?);
            if detector.ring_full() {
                scored_since_full += 1;
            }
            if decide && detector.ring_full() && scored_since_full > det.warmup_ticks {
                command = detector.decide_mode(controller.gains_recovered(), t_det);
                row.mode = command;
            }
        }
        detector_log.push(row);
    }
    if let Some(f) = &fault {
        info!("run stopped at tick {} of {ticks}", f.tick);
    }

    let metrics = evaluate(&control, &detector_log, &config.perturbations, &config.evaluation, dt)?;
    Ok(RunOutput {
        control,
        detector: detector_log,
        prediction,
        metrics,
        min_contact_normal_n: min_normal,
        models: models.len(),
        dof: config.arm.dof(),
        fault,
    })
}

fn predict_row(models: &[ModelParams], w: &Window, tick: usize, t: f64) -> Result<PredictionRow> {
    let last = w.force.len() / FORCE_DIM - 1;
    let (mean, std) = ensemble_moments(models, &w.velocity, last)?;
    let f = &w.force[FORCE_DIM * last..];
    Ok(PredictionRow {
        tick,
        t,
        f_t: f[0],
        f_n: f[1],
        f_t_mean: mean[0],
        f_t_lower: mean[0] - 3.0 * std[0],
        f_t_upper: mean[0] + 3.0 * std[0],
        f_n_mean: mean[1],
        f_n_lower: mean[1] - 3.0 * std[1],
        f_n_upper: mean[1] + 3.0 * std[1],
    })
}

/// Detector-rate local-frame samples recovered from a control log.
pub fn detector_samples(control: &[ControlRow], decimation: usize, events: &[PerturbationEvent]) -> Vec<DetectorSample> {
    control
        .iter()
        .filter(|r| (r.tick + 1) % decimation == 0)
        .map(|r| {
            let (v, f) = local_frame(r.alpha_hat, &Vector3::from(r.twist), &Vector3::from(r.f_e));
            DetectorSample {
                velocity: v.into(),
                force: f.into(),
                mode: r.mode,
                perturbed: events.iter().any(|e| e.is_active(r.t)),
            }
        })
        .collect()
}

/// Run one clean high-stiffness execution and window its detector samples.
pub fn collect_training_data(config: &ScenarioConfig) -> Result<(Vec<Window>, usize)> {
    if !config.perturbations.is_empty() {
        return Err(Error::Config(format!(
            "scenario {:?} has {} perturbation events; training data must come from a clean run",
            config.name,
            config.perturbations.len()
        )));
    }
    let mut clean = config.clone();
    clean.adaptation = false;
    let run = run_scenario(&clean, &[])?;
    if let Some(f) = run.fault {
        return Err(Error::SimFault {
            t: f.tick as f64 * config.dt_s,
            reason: f.message,
        });
    }
    let samples = detector_samples(&run.control, config.detector.decimation, &[]);
    let windows = harvest_windows(&samples, config.detector.window_len);
    info!("{} samples, {} windows", samples.len(), windows.len());
    Ok((windows, samples.len()))
}

pub fn write_training_data(config: &ScenarioConfig, path: &Path) -> Result<(usize, usize)> {
    let (windows, samples) = collect_training_data(config)?;
    write_dataset(path, &windows)?;
    Ok((samples, windows.len()))
}

/// Score a clean run with normal mode pinned and derive the threshold.
pub fn calibrate(config: &ScenarioConfig, models: &[ModelParams]) -> Result<(Calibration, RunOutput)> {
    if models.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut clean = config.clone();
    clean.adaptation = false;
    let run = run_scenario(&clean, models)?;
    let scores: Vec<f64> = run.detector.iter().map(|r| r.score).filter(|s| s.is_finite()).collect();
    let det = &config.detector;
    let skip = det.warmup_ticks.min(scores.len());
    let mut calibration = calibrate_threshold(&scores[skip..], det.ring_len, det.decimation as f64 * config.dt_s, det.calibration_k)?;
    if let Some(fixed) = det.threshold {
        calibration.threshold = fixed;
    }
    Ok((calibration, run))
}

/// Joint view of the logs for force/prediction, score, abnormal score and
/// stiffness panels, one row per detector tick.
pub fn plot_rows(
    control: &[ControlRow],
    detector: &[DetectorRow],
    prediction: &[PredictionRow],
    dt: f64,
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    use super::logs::fmt_f64;
    let models = detector.first().map(|d| d.model_scores.len()).unwrap_or(0);
    let mut header: Vec<String> = [
        "tick", "t", "f_n", "f_n_mean", "f_n_lower", "f_n_upper", "f_t", "f_t_mean", "f_t_lower", "f_t_upper", "f_d",
        "score",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..models).map(|i| format!("score_{i}")));
    header.extend(["abnormal_score", "threshold", "gain_scale", "mode"].map(String::from));
    let mut pred = prediction.iter().peekable();
    let mut rows = Vec::with_capacity(detector.len());
    for d in detector {
        // the detector tick follows the control tick that produced its sample
        let k = ((d.t / dt).round() as usize).saturating_sub(1);
        let c = control
            .get(k)
            .ok_or_else(|| Error::MismatchedLogs(format!("detector tick {} has no control row", d.tick)))?;
        let p = match pred.peek() {
            Some(p) if p.tick == d.tick => pred.next(),
            _ => None,
        };
        let nan = f64::NAN;
        let mut r = vec![d.tick.to_string(), fmt_f64(d.t)];
        r.extend(
            match p {
                Some(p) => [p.f_n, p.f_n_mean, p.f_n_lower, p.f_n_upper, p.f_t, p.f_t_mean, p.f_t_lower, p.f_t_upper],
                None => [nan; 8],
            }
            .map(fmt_f64),
        );
        r.push(fmt_f64(c.f_d));
        r.push(fmt_f64(d.score));
        r.extend(d.model_scores.iter().map(|v| fmt_f64(*v)));
        r.extend([fmt_f64(d.abnormal_score), fmt_f64(d.threshold), fmt_f64(c.gain_scale), d.mode.to_string()]);
        rows.push(r);
    }
    Ok((header, rows))
}
