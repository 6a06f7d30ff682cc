use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty contact with regularized Coulomb friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    pub stiffness_n_per_m: f64,
    pub damping_ns_per_m: f64,
    pub friction_coefficient: f64,
    #[serde(default = "default_regularization")]
    pub regularization_velocity_mps: f64,
}

fn default_regularization() -> f64 {
    1e-3
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness_n_per_m: 2.0e4,
            damping_ns_per_m: 20.0,
            friction_coefficient: 0.3,
            regularization_velocity_mps: default_regularization(),
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if self.stiffness_n_per_m > 0.0
            && self.damping_ns_per_m >= 0.0
            && self.friction_coefficient >= 0.0
            && self.regularization_velocity_mps > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid contact parameters {self:?}")))
        }
    }
}

/// Contact force in the surface frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactForce {
    /// Always >= 0: contact can push but never pull.
    pub normal: f64,
    pub tangential: f64,
    /// `∂tangential/∂v_t` with the normal force held fixed (<= 0).
    pub friction_slope: f64,
}

impl ContactForce {
    /// Planar wrench `(fx, fy, tau_z)`; point contact carries no torque.
    pub fn wrench(&self, normal: &Vector2<f64>, tangent: &Vector2<f64>) -> Vector3<f64> {
        let f = self.normal * normal + self.tangential * tangent;
        Vector3::new(f.x, f.y, 0.0)
    }
}

pub fn contact_force(distance: f64, v_normal: f64, v_tangent: f64, params: &ContactParams) -> ContactForce {
    if distance >= 0.0 {
        return ContactForce::default();
    }
    let normal = (-params.stiffness_n_per_m * distance - params.damping_ns_per_m * v_normal).max(0.0);
    let eps2 = params.regularization_velocity_mps.powi(2);
    let root = (v_tangent * v_tangent + eps2).sqrt();
    let mu = params.friction_coefficient;
    ContactForce {
        normal,
        tangential: -mu * normal * v_tangent / root,
        friction_slope: -mu * normal * eps2 / (root * root * root),
    }
}
