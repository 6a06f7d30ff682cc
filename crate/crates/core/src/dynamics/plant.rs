use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};

use super::{
    active_disturbance, bias_forces, contact_force, gravity_torques, jacobian, mass_matrix, surface_query,
    ArmParams, ContactParams, PerturbationEvent, RobotState, SurfaceModel, SurfaceQuery,
};
use crate::error::{Error, Result};

/// Everything outside the arm at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub surface: &'a SurfaceModel,
    pub contact: &'a ContactParams,
    pub schedule: &'a [PerturbationEvent],
    pub t: f64,
}

/// Environment wrench on the end-effector evaluated at the current state.
#[derive(Debug, Clone, Default)]
pub struct ContactReport {
    /// Contacts plus external wrenches, `(fx, fy, tau)`.
    pub wrench: Vector3<f64>,
    pub contact_wrench: Vector3<f64>,
    /// Surface-normal component of every active contact force.
    pub normal_forces: Vec<f64>,
    /// Normal force against the task surface (0 when separated).
    pub surface_normal_force: f64,
    pub surface: Option<SurfaceQuery>,
    /// `Σ ∂F_t/∂v_t · t tᵀ` over active contacts, used by the implicit friction update.
    friction_jacobian: Matrix2<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: RobotState,
    pub report: ContactReport,
}

/// Semi-implicit Euler integrator for the arm in joint space.
#[derive(Debug, Clone)]
pub struct Plant {
    pub arm: ArmParams,
}

impl Plant {
    pub fn new(arm: ArmParams) -> Result<Self> {
        arm.validate()?;
        Ok(Self { arm })
    }

    pub fn sense(&self, state: &RobotState, env: &Environment<'_>) -> Result<ContactReport> {
        let pose = state.pose(&self.arm);
        let twist = state.twist(&self.arm);
        let point = Vector2::new(pose.x, pose.y);
        let velocity = Vector2::new(twist.x, twist.y);
        let disturbance = active_disturbance(env.schedule, env.t);

        let mut report = ContactReport::default();
        let mut add = |query: &SurfaceQuery, params: &ContactParams| -> f64 {
            let f = contact_force(query.distance, velocity.dot(&query.normal), velocity.dot(&query.tangent), params);
            if query.distance < 0.0 {
                report.normal_forces.push(f.normal);
                report.contact_wrench += f.wrench(&query.normal, &query.tangent);
                report.friction_jacobian += f.friction_slope * query.tangent * query.tangent.transpose();
            }
            f.normal
        };
        let query = surface_query(env.surface, &point)?;
        let surface_normal = add(&query, env.contact);
        for (obstacle, params) in &disturbance.obstacles {
            let q = obstacle.query(&point)?;
            add(&q, params);
        }
        report.surface_normal_force = surface_normal;
        report.surface = Some(query);
        report.wrench = report.contact_wrench + disturbance.wrench;
        Ok(report)
    }

    /// Advance one step of `M q̈ = τ + Jᵀ F_e − c − g − D q̇`.
    ///
    /// Velocity is updated first, then position. Joint damping and the
    /// friction slope are taken at the new velocity (linearly implicit), all
    /// other forces at the old state.
    pub fn step(&self, state: &RobotState, tau: &DVector<f64>, env: &Environment<'_>, dt: f64) -> Result<StepOutput> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !tau.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("joint torque command".into()));
        }
        let arm = &self.arm;
        let n = arm.dof();
        let report = self.sense(state, env)?;

        let jac = jacobian(arm, &state.q);
        let jac_xy = jac.rows(0, 2).into_owned();
        let mass = mass_matrix(arm, &state.q);
        let c = bias_forces(arm, &state.q, &state.qdot);
        let g = gravity_torques(arm, &state.q);
        let damping = DMatrix::from_diagonal(&DVector::from_column_slice(&arm.joint_damping));
        let fj = DMatrix::from_column_slice(2, 2, report.friction_jacobian.as_slice());
        let friction_joint = jac_xy.transpose() * fj * &jac_xy;

        let generalized = tau + jac.transpose() * DVector::from_column_slice(report.wrench.as_slice()) - c - g;
        let lhs = &mass + (&damping - &friction_joint) * dt;
        let rhs = &mass * &state.qdot + (generalized - &friction_joint * &state.qdot) * dt;
        let qdot = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SimFault { t: env.t, reason: "singular velocity update".into() })?;
        let q = &state.q + &qdot * dt;
        debug_assert_eq!(q.len(), n);
        let next = RobotState::new(q, qdot);
        next.check(arm.qdot_limit, env.t + dt)?;
        Ok(StepOutput { state: next, report })
    }
}
