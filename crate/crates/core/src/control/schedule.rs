use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Normal,
    Adaptive,
    Recovery,
}

impl ControlMode {
    /// The only mode changes the detector may issue.
    pub fn is_valid_transition(from: ControlMode, to: ControlMode) -> bool {
        use ControlMode::*;
        matches!(
            (from, to),
            (Normal, Adaptive) | (Adaptive, Recovery) | (Recovery, Normal) | (Recovery, Adaptive)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Normal => "normal",
            ControlMode::Adaptive => "adaptive",
            ControlMode::Recovery => "recovery",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(ControlMode::Normal),
            "adaptive" => Some(ControlMode::Adaptive),
            "recovery" => Some(ControlMode::Recovery),
            _ => None,
        }
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Linear decay/recovery of one adaptable parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledParam {
    pub k_max: f64,
    /// Decay rate in parameter units per second.
    pub alpha: f64,
    /// Recovery rate in parameter units per second.
    pub beta: f64,
}

impl ScheduledParam {
    /// Rates given as fractions of `k_max` per second.
    pub fn with_fractional_rates(k_max: f64, decay_per_s: f64, recovery_per_s: f64) -> Self {
        Self {
            k_max,
            alpha: decay_per_s * k_max,
            beta: recovery_per_s * k_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // a parameter pinned at zero never moves, so its rates are irrelevant
        if self.k_max == 0.0 {
            return Ok(());
        }
        if self.k_max > 0.0 && self.alpha > 0.0 && self.beta > 0.0 && self.beta < self.alpha {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "schedule needs k_max >= 0 and 0 < beta < alpha, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub params: Vec<ScheduledParam>,
    /// Time of the last mode switch.
    pub t0: f64,
    /// Parameter values at `t0`.
    pub start: Vec<f64>,
    pub current: Vec<f64>,
    pub mode: ControlMode,
}

impl GainSchedule {
    pub fn new(params: Vec<ScheduledParam>) -> Result<Self> {
        for p in &params {
            p.validate()?;
        }
        let current: Vec<f64> = params.iter().map(|p| p.k_max).collect();
        Ok(Self {
            params,
            t0: 0.0,
            start: current.clone(),
            current,
            mode: ControlMode::Normal,
        })
    }

    /// Enter `mode` at time `t`, seeding the new segment with the values in effect.
    pub fn switch(&mut self, mode: ControlMode, t: f64) {
        if mode != self.mode {
            self.mode = mode;
            self.t0 = t;
            self.start = self.current.clone();
        }
    }

    pub fn update(&mut self, t: f64) -> &[f64] {
        self.current = schedule_gains(self, self.mode, t);
        &self.current
    }

    pub fn fully_recovered(&self) -> bool {
        self.current.iter().zip(&self.params).all(|(v, p)| *v == p.k_max)
    }

    /// Current value of parameter `i` as a fraction of its maximum.
    pub fn fraction(&self, i: usize) -> f64 {
        let k_max = self.params[i].k_max;
        if k_max == 0.0 {
            1.0
        } else {
            self.current[i] / k_max
        }
    }
}

/// Parameter values at time `t` in `mode`, measured from the schedule's last switch.
pub fn schedule_gains(schedule: &GainSchedule, mode: ControlMode, t: f64) -> Vec<f64> {
    let elapsed = t - schedule.t0;
    schedule
        .params
        .iter()
        .zip(&schedule.start)
        .map(|(p, &k0)| match mode {
            ControlMode::Normal => p.k_max,
            ControlMode::Adaptive => (k0 - p.alpha * elapsed).max(0.0),
            ControlMode::Recovery => (k0 + p.beta * elapsed).min(p.k_max),
        })
        .collect()
}
