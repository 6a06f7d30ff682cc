use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{bias_forces, gravity_torques, jacobian, jacobian_dot_qdot, mass_matrix, ArmParams, RobotState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularityPolicy {
    pub condition_bound: f64,
    pub strict: bool,
}

impl Default for SingularityPolicy {
    fn default() -> Self {
        Self {
            condition_bound: 1e6,
            strict: false,
        }
    }
}

/// Operational-space quantities at one state.
#[derive(Debug, Clone)]
pub struct TaskSpaceModel {
    /// Λ = (J M⁻¹ Jᵀ)⁻¹
    pub inertia: Matrix3<f64>,
    /// Velocity-product force μ = J̄ᵀ c − Λ J̇ q̇
    pub bias: Vector3<f64>,
    /// p = J̄ᵀ g
    pub gravity: Vector3<f64>,
    pub jacobian: DMatrix<f64>,
    /// Dynamically consistent inverse J̄ = M⁻¹ Jᵀ Λ.
    pub dyn_inverse: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub mass_inverse: DMatrix<f64>,
    pub joint_bias: DVector<f64>,
    pub joint_gravity: DVector<f64>,
    pub condition: f64,
    pub singular: bool,
}

impl TaskSpaceModel {
    /// `I − Jᵀ J̄ᵀ`, the dynamically consistent null-space projector for torques.
    pub fn null_space_projector(&self) -> DMatrix<f64> {
        let n = self.mass.nrows();
        DMatrix::identity(n, n) - self.jacobian.transpose() * self.dyn_inverse.transpose()
    }
}

fn condition_number(jac: &DMatrix<f64>) -> f64 {
    let sv = jac.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn task_space_matrices(state: &RobotState, arm: &ArmParams, policy: &SingularityPolicy) -> Result<TaskSpaceModel> {
    if !state.q.iter().chain(state.qdot.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("robot state".into()));
    }
    let jac = jacobian(arm, &state.q);
    let condition = condition_number(&jac);
    let singular = !(condition <= policy.condition_bound);
    if singular && policy.strict {
        return Err(Error::Singular {
            condition,
            bound: policy.condition_bound,
        });
    }

    let mass = mass_matrix(arm, &state.q);
    let mass_inverse = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("mass matrix is not positive definite".into()))?
        .inverse();
    let lambda_inv = &jac * &mass_inverse * jac.transpose();
    let lambda_dyn = if singular {
        lambda_inv
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidParameter(format!("pseudo-inverse failed: {e}")))?
    } else {
        lambda_inv
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| lambda_inv.try_inverse())
            .ok_or(Error::Singular {
                condition,
                bound: policy.condition_bound,
            })?
    };
    let lambda_dyn = (&lambda_dyn + lambda_dyn.transpose()) * 0.5;
    let inertia = Matrix3::from_iterator(lambda_dyn.iter().copied());

    let dyn_inverse = &mass_inverse * jac.transpose() * &lambda_dyn;
    let joint_bias = bias_forces(arm, &state.q, &state.qdot);
    let joint_gravity = gravity_torques(arm, &state.q);
    let jdot_qdot = jacobian_dot_qdot(arm, &state.q, &state.qdot);

    let mu = dyn_inverse.transpose() * &joint_bias;
    let p = dyn_inverse.transpose() * &joint_gravity;
    let bias = Vector3::new(mu[0], mu[1], mu[2]) - inertia * jdot_qdot;
    let gravity = Vector3::new(p[0], p[1], p[2]);

    Ok(TaskSpaceModel {
        inertia,
        bias,
        gravity,
        jacobian: jac,
        dyn_inverse,
        mass,
        mass_inverse,
        joint_bias,
        joint_gravity,
        condition,
        singular,
    })
}
