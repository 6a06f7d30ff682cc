//! Recursive Newton-Euler for the planar chain. Mass matrix, velocity-product
//! forces and gravity torques are all obtained from it.

use nalgebra::{DMatrix, DVector, Vector2};

use super::ArmParams;

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Joint torques required to produce `qddot` at `(q, qdot)` under `gravity`.
pub fn inverse_dynamics(
    arm: &ArmParams,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
    gravity: &Vector2<f64>,
) -> DVector<f64> {
    let n = arm.dof();
    let mut com_acc = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    // gravity enters as an upward base acceleration
    let mut joint_acc = -gravity;
    let (mut phi, mut omega, mut alpha) = (0.0, 0.0, 0.0);
    for i in 0..n {
        phi += q[i];
        omega += qdot[i];
        alpha += qddot[i];
        let u = Vector2::new(phi.cos(), phi.sin());
        let u_perp = Vector2::new(-u.y, u.x);
        let l = arm.link_lengths[i];
        let r = 0.5 * l;
        com_acc.push(joint_acc + alpha * r * u_perp - omega * omega * r * u);
        joint_acc += alpha * l * u_perp - omega * omega * l * u;
        axes.push(u);
        alphas.push(alpha);
    }

    let mut tau = DVector::zeros(n);
    let mut force = arm.tip_mass * joint_acc;
    let mut moment = 0.0;
    for i in (0..n).rev() {
        let l = arm.link_lengths[i];
        let link_force = arm.link_masses[i] * com_acc[i];
        moment += arm.com_inertia(i) * alphas[i]
            + cross(&(0.5 * l * axes[i]), &link_force)
            + cross(&(l * axes[i]), &force);
        force += link_force;
        tau[i] = moment;
    }
    tau
}

pub fn mass_matrix(arm: &ArmParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = arm.dof();
    let zero = DVector::zeros(n);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        m.set_column(j, &inverse_dynamics(arm, q, &zero, &e, &Vector2::zeros()));
    }
    // RNEA columns agree to rounding; enforce exact symmetry
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Coriolis and centrifugal joint torques `c(q, q̇)`.
pub fn bias_forces(arm: &ArmParams, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    let n = arm.dof();
    inverse_dynamics(arm, q, qdot, &DVector::zeros(n), &Vector2::zeros())
}

pub fn gravity_torques(arm: &ArmParams, q: &DVector<f64>) -> DVector<f64> {
    let n = arm.dof();
    let zero = DVector::zeros(n);
    inverse_dynamics(arm, q, &zero, &zero, &arm.gravity())
}
