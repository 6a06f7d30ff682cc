//! Planar serial-arm plant: kinematics, joint-space dynamics, the operational
//! space construction, penalty contact against parametric surfaces and
//! scripted disturbances.

mod contact;
mod disturbance;
mod kinematics;
mod plant;
mod rigid_body;
mod surface;
mod task_space;

pub use contact::{contact_force, ContactForce, ContactParams};
pub use disturbance::{active_disturbance, ActiveDisturbance, Obstacle, PerturbationEvent, PerturbationKind};
pub use kinematics::{ee_pose, ee_twist, inverse_kinematics, jacobian, jacobian_dot_qdot};
pub use plant::{ContactReport, Environment, Plant, StepOutput};
pub use rigid_body::{bias_forces, gravity_torques, inverse_dynamics, mass_matrix};
pub use surface::{surface_query, SurfaceModel, SurfaceQuery};
pub use task_space::{task_space_matrices, SingularityPolicy, TaskSpaceModel};

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint-space parameters of a planar serial arm with revolute joints.
///
/// Each link's center of mass sits at its midpoint; `link_inertias` are taken
/// about the proximal joint axis. An optional point mass at the tool tip
/// models an unmodelled payload when the plant and controller models differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmParams {
    #[serde(rename = "link_lengths_m")]
    pub link_lengths: Vec<f64>,
    #[serde(rename = "link_masses_kg")]
    pub link_masses: Vec<f64>,
    #[serde(rename = "link_inertias_kgm2")]
    pub link_inertias: Vec<f64>,
    #[serde(rename = "joint_damping_nms_per_rad")]
    pub joint_damping: Vec<f64>,
    #[serde(rename = "gravity_mps2")]
    pub gravity: [f64; 2],
    #[serde(rename = "tip_mass_kg")]
    pub tip_mass: f64,
    /// Joint speed beyond which the simulation is considered faulted.
    #[serde(rename = "qdot_limit_rad_per_s")]
    pub qdot_limit: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        let lengths = vec![0.4, 0.4, 0.2];
        let masses = vec![2.0, 1.5, 0.5];
        let inertias = lengths
            .iter()
            .zip(&masses)
            .map(|(l, m)| m * l * l / 3.0)
            .collect();
        Self {
            link_lengths: lengths,
            link_masses: masses,
            link_inertias: inertias,
            joint_damping: vec![0.0; 3],
            gravity: [0.0, -9.81],
            tip_mass: 0.0,
            qdot_limit: 50.0,
        }
    }
}

impl ArmParams {
    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn gravity(&self) -> Vector2<f64> {
        Vector2::new(self.gravity[0], self.gravity[1])
    }

    /// Inertia of link `i` about its center of mass.
    pub fn com_inertia(&self, i: usize) -> f64 {
        let r = 0.5 * self.link_lengths[i];
        self.link_inertias[i] - self.link_masses[i] * r * r
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n == 0 {
            return Err(Error::InvalidParameter("arm needs at least one link".into()));
        }
        for (name, len) in [
            ("link_masses", self.link_masses.len()),
            ("link_inertias", self.link_inertias.len()),
            ("joint_damping", self.joint_damping.len()),
        ] {
            if len != n {
                return Err(Error::InvalidParameter(format!(
                    "{name} has {len} entries, expected {n}"
                )));
            }
        }
        for i in 0..n {
            let (l, m, inertia) = (self.link_lengths[i], self.link_masses[i], self.link_inertias[i]);
            if !(l > 0.0 && m > 0.0 && inertia > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "link {i}: length, mass and inertia must be strictly positive"
                )));
            }
            // negative COM inertia would make M(q) indefinite
            if self.com_inertia(i) < -1e-12 * inertia {
                return Err(Error::InvalidParameter(format!(
                    "link {i}: inertia about the joint {inertia} is below m (l/2)^2"
                )));
            }
            if !(self.joint_damping[i] >= 0.0) {
                return Err(Error::InvalidParameter(format!("link {i}: damping must be non-negative")));
            }
        }
        if !(self.tip_mass >= 0.0) || !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidParameter("tip mass and gravity must be finite, tip mass >= 0".into()));
        }
        if !(self.qdot_limit > 0.0) {
            return Err(Error::InvalidParameter("qdot_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Joint positions and velocities; the ground truth of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    /// End-effector pose `(px, py, theta)`.
    pub fn pose(&self, arm: &ArmParams) -> Vector3<f64> {
        ee_pose(arm, &self.q)
    }

    /// End-effector twist `(vx, vy, omega)`.
    pub fn twist(&self, arm: &ArmParams) -> Vector3<f64> {
        ee_twist(arm, &self.q, &self.qdot)
    }

    pub fn check(&self, qdot_limit: f64, t: f64) -> Result<()> {
        if !self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite()) {
            return Err(Error::SimFault {
                t,
                reason: "non-finite joint state".into(),
            });
        }
        if let Some(v) = self.qdot.iter().find(|v| v.abs() > qdot_limit) {
            return Err(Error::SimFault {
                t,
                reason: format!("joint speed {v:.3} rad/s exceeds limit {qdot_limit}"),
            });
        }
        Ok(())
    }
}

/// Kinetic plus potential energy of the arm (tip mass included).
pub fn mechanical_energy(arm: &ArmParams, state: &RobotState) -> f64 {
    let m = mass_matrix(arm, &state.q);
    let kinetic = 0.5 * state.qdot.dot(&(&m * &state.qdot));
    let g = arm.gravity();
    let mut potential = 0.0;
    let mut joint = Vector2::zeros();
    let mut phi = 0.0;
    for i in 0..arm.dof() {
        phi += state.q[i];
        let u = Vector2::new(phi.cos(), phi.sin());
        let com = joint + 0.5 * arm.link_lengths[i] * u;
        potential -= arm.link_masses[i] * g.dot(&com);
        joint += arm.link_lengths[i] * u;
    }
    potential -= arm.tip_mass * g.dot(&joint);
    kinetic + potential
}
