use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::EvaluationConfig;
use super::logs::{ControlRow, DetectorRow};
use crate::control::{local_frame, ControlMode};
use crate::dynamics::PerturbationEvent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// RMSE of `F_d − F_n` over normal-mode ticks after the settle time.
    pub force_rmse_n: Option<f64>,
    pub rmse_ticks: usize,
    /// Per event: first `A < θ` detector tick at or after onset, relative to onset.
    pub detection_latency_s: Vec<Option<f64>>,
    pub min_stiffness_fraction: f64,
    /// Per event: event end to the first normal-mode tick that closes the
    /// event's adaptive episode. `None` if there was no episode or it never closed.
    pub recovery_time_s: Vec<Option<f64>>,
    /// Normal-to-adaptive switches away from every event.
    pub false_alarms: usize,
    pub mode_switches: usize,
    /// Wiping-motion time elapsed after the last event ended.
    pub motion_after_events_s: f64,
}

fn check_logs(control: &[ControlRow], detector: &[DetectorRow]) -> Result<()> {
    if control.iter().enumerate().any(|(i, r)| r.tick != i) {
        return Err(Error::MismatchedLogs("control ticks must count up from 0".into()));
    }
    if detector.iter().enumerate().any(|(i, r)| r.tick != i) {
        return Err(Error::MismatchedLogs("detector ticks must count up from 0".into()));
    }
    if let (Some(c), Some(d)) = (control.last(), detector.last()) {
        let dt = if control.len() > 1 { control[1].t - control[0].t } else { d.t - c.t };
        if d.t > c.t + 1.5 * dt {
            return Err(Error::MismatchedLogs(format!(
                "detector log ends at {} s, after the control log ({} s)",
                d.t, c.t
            )));
        }
    } else if control.is_empty() && !detector.is_empty() {
        return Err(Error::MismatchedLogs("detector log without control log".into()));
    }
    Ok(())
}

/// Recompute run metrics from the logs and the event schedule.
pub fn evaluate(
    control: &[ControlRow],
    detector: &[DetectorRow],
    events: &[PerturbationEvent],
    settings: &EvaluationConfig,
    dt: f64,
) -> Result<RunMetrics> {
    check_logs(control, detector)?;

    let mut sq = 0.0;
    let mut n = 0usize;
    for r in control.iter().filter(|r| r.mode == ControlMode::Normal && r.t >= settings.settle_s) {
        let (_, local) = local_frame(r.alpha_hat, &Vector3::zeros(), &Vector3::from(r.f_e));
        sq += (r.f_d - local.y).powi(2);
        n += 1;
    }
    let force_rmse_n = (n > 0).then(|| (sq / n as f64).sqrt());

    let detection_latency_s = events
        .iter()
        .map(|e| {
            detector
                .iter()
                .filter(|d| d.t >= e.start_s && d.t <= e.end_s() + settings.event_grace_s)
                .find(|d| d.abnormal_score < d.threshold)
                .map(|d| d.t - e.start_s)
        })
        .collect();

    let recovery_time_s = events
        .iter()
        .map(|e| {
            let episode = control
                .iter()
                .position(|r| r.t >= e.start_s && r.mode != ControlMode::Normal)
                .filter(|&i| control[i].t <= e.end_s() + settings.event_grace_s)?;
            control[episode..]
                .iter()
                .find(|r| r.mode == ControlMode::Normal)
                .map(|r| (r.t - e.end_s()).max(0.0))
        })
        .collect();

    let min_stiffness_fraction = control.iter().map(|r| r.gain_scale).fold(1.0, f64::min);

    let near_event = |t: f64| events.iter().any(|e| t >= e.start_s && t <= e.end_s() + settings.event_grace_s);
    let mut false_alarms = 0;
    let mut mode_switches = 0;
    for w in control.windows(2) {
        if w[0].mode != w[1].mode {
            mode_switches += 1;
            if w[0].mode == ControlMode::Normal && w[1].mode == ControlMode::Adaptive && !near_event(w[1].t) {
                false_alarms += 1;
            }
        }
    }

    let last_end = events.iter().map(PerturbationEvent::end_s).fold(f64::NEG_INFINITY, f64::max);
    let motion_after_events_s = control.iter().filter(|r| r.t >= last_end).map(|r| r.gain_scale * dt).sum();

    Ok(RunMetrics {
        force_rmse_n,
        rmse_ticks: n,
        detection_latency_s,
        min_stiffness_fraction,
        recovery_time_s,
        false_alarms,
        mode_switches,
        motion_after_events_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PerturbationKind;

    fn control_row(tick: usize, dt: f64, f_n: f64, mode: ControlMode) -> ControlRow {
        ControlRow {
            tick,
            t: tick as f64 * dt,
            q: vec![0.0; 3],
            qdot: vec![0.0; 3],
            pose: [0.0; 3],
            twist: [0.0; 3],
            // normal along +y
            f_e: [0.0, f_n, 0.0],
            f_d: 10.0,
            alpha_hat: std::f64::consts::FRAC_PI_2,
            mu_hat: 0.0,
            v_vmp: [0.0; 3],
            v_f: [0.0; 3],
            v_r: [0.0; 3],
            v_t: [0.0; 3],
            v_d: [0.0; 3],
            f_m: [0.0; 3],
            tau: vec![0.0; 3],
            gain_scale: if mode == ControlMode::Normal { 1.0 } else { 0.0 },
            mode,
        }
    }

    fn detector_row(tick: usize, period: f64, a: f64) -> DetectorRow {
        DetectorRow {
            tick,
            t: (tick + 1) as f64 * period,
            score: 0.0,
            model_scores: vec![0.0],
            abnormal_score: a,
            threshold: -10.0,
            mode: ControlMode::Normal,
        }
    }

    fn event(start_s: f64, duration_s: f64) -> PerturbationEvent {
        PerturbationEvent {
            start_s,
            duration_s,
            kind: PerturbationKind::Drag { wrench: [1.0, 0.0, 0.0] },
        }
    }

    #[test]
    fn constant_force_error() {
        let settings = EvaluationConfig { settle_s: 0.0, event_grace_s: 0.0 };
        let rows: Vec<_> = (0..100).map(|k| control_row(k, 1e-3, 9.5, ControlMode::Normal)).collect();
        let m = evaluate(&rows, &[], &[], &settings, 1e-3).unwrap();
        assert!((m.force_rmse_n.unwrap() - 0.5).abs() < 1e-12);
        assert!(m.detection_latency_s.is_empty());
        assert_eq!(m.false_alarms, 0);
    }

    #[test]
    fn latency_from_constructed_log() {
        let period = 0.033;
        let settings = EvaluationConfig { settle_s: 0.0, event_grace_s: 0.0 };
        let control: Vec<_> = (0..2000).map(|k| control_row(k, 1e-3, 10.0, ControlMode::Normal)).collect();
        // onset at detector tick 9; A dips at tick 12
        let detector: Vec<_> = (0..50).map(|j| detector_row(j, period, if j >= 12 { -20.0 } else { 0.0 })).collect();
        let start = detector[9].t;
        let m = evaluate(&control, &detector, &[event(start, 1.0)], &settings, 1e-3).unwrap();
        assert!((m.detection_latency_s[0].unwrap() - 0.099).abs() < 1e-12);
    }

    #[test]
    fn recovery_and_false_alarms() {
        let settings = EvaluationConfig { settle_s: 0.0, event_grace_s: 0.1 };
        let mode_at = |k: usize| match k {
            100..=149 => ControlMode::Adaptive,
            150..=199 => ControlMode::Recovery,
            400..=409 => ControlMode::Adaptive,
            410..=419 => ControlMode::Recovery,
            _ => ControlMode::Normal,
        };
        let control: Vec<_> = (0..600).map(|k| control_row(k, 0.01, 10.0, mode_at(k))).collect();
        let m = evaluate(&control, &[], &[event(0.95, 0.5)], &settings, 0.01).unwrap();
        assert!((m.recovery_time_s[0].unwrap() - 0.55).abs() < 1e-9);
        assert_eq!(m.false_alarms, 1);
        assert_eq!(m.mode_switches, 6);
        assert_eq!(m.min_stiffness_fraction, 0.0);
    }

    #[test]
    fn mismatched_logs_are_rejected() {
        let control: Vec<_> = (0..10).map(|k| control_row(k, 1e-3, 10.0, ControlMode::Normal)).collect();
        let detector = vec![detector_row(0, 1.0, 0.0)];
        let err = evaluate(&control, &detector, &[], &EvaluationConfig::default(), 1e-3);
        assert!(matches!(err, Err(Error::MismatchedLogs(_))));
    }
}
