use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Diagonal task-space impedance, ordered `(x, y, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    pub mass: Vector3<f64>,
    pub damping: Vector3<f64>,
    pub stiffness: Vector3<f64>,
    /// Decay rate of the integrated velocity error (1/s). Zero disables the leak.
    pub leak_rate: f64,
}

impl ImpedanceGains {
    pub fn validate(&self) -> Result<()> {
        let nonneg = self.mass.iter().chain(self.damping.iter()).chain(self.stiffness.iter()).all(|v| *v >= 0.0);
        let damped = (0..3).all(|i| self.stiffness[i] == 0.0 || self.damping[i] > 0.0);
        if nonneg && damped && self.leak_rate >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "impedance gains must be non-negative and damped wherever stiff: {self:?}"
            )))
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            mass: self.mass * scale,
            damping: self.damping * scale,
            stiffness: self.stiffness * scale,
            leak_rate: self.leak_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImpedanceState {
    /// Integrated velocity error, i.e. a position-level error.
    pub integral: Vector3<f64>,
    pub prev_error: Vector3<f64>,
}

/// `F_m = M_c (Δv − Δv_prev)/dt + D_c Δv + K_c ∫Δv` with `Δv = V_d − V_e`.
pub fn impedance_force(
    v_d: &Vector3<f64>,
    v_e: &Vector3<f64>,
    state: &ImpedanceState,
    gains: &ImpedanceGains,
    dt: f64,
) -> (Vector3<f64>, ImpedanceState) {
    let error = v_d - v_e;
    let decay = (-gains.leak_rate * dt).exp();
    let integral = state.integral * decay + error * dt;
    let force = gains.mass.component_mul(&(error - state.prev_error)) / dt
        + gains.damping.component_mul(&error)
        + gains.stiffness.component_mul(&integral);
    (force, ImpedanceState { integral, prev_error: error })
}
