use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gains of one velocity-source PID. Output units are velocity per error unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// One-pole low-pass coefficient on the backward-difference derivative.
    #[serde(default = "default_filter")]
    pub derivative_filter: f64,
    pub output_clamp: f64,
}

fn default_filter() -> f64 {
    0.1
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let gains_ok = [self.kp, self.ki, self.kd].iter().all(|g| *g >= 0.0 && g.is_finite());
        let filter_ok = self.derivative_filter > 0.0 && self.derivative_filter <= 1.0;
        if gains_ok && filter_ok && self.output_clamp > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid PID gains {self:?}")))
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            kp: self.kp * scale,
            ki: self.ki * scale,
            kd: self.kd * scale,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    /// Running `∫ K_i e dt`, so retuning `K_i` mid-run causes no output jump.
    pub integral: f64,
    pub prev_error: f64,
    pub derivative: f64,
}

/// One PID update. The integral uses the trapezoid rule and is frozen while
/// the output saturates.
pub fn pid_velocity(state: &PidState, gains: &PidGains, error: f64, dt: f64) -> (f64, PidState) {
    let raw = (error - state.prev_error) / dt;
    let derivative = state.derivative + gains.derivative_filter * (raw - state.derivative);
    let integral = state.integral + gains.ki * 0.5 * (error + state.prev_error) * dt;
    let unclamped = gains.kp * error + integral + gains.kd * derivative;
    let (output, integral) = if unclamped.abs() > gains.output_clamp {
        let held = gains.kp * error + state.integral + gains.kd * derivative;
        (held.clamp(-gains.output_clamp, gains.output_clamp), state.integral)
    } else {
        (unclamped, integral)
    };
    let next = PidState {
        integral,
        prev_error: error,
        derivative,
    };
    (output, next)
}
