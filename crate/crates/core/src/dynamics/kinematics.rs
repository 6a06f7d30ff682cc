use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};

use super::ArmParams;
use crate::error::{Error, Result};

/// Absolute link angles and angular rates.
fn absolute(q: &DVector<f64>, qdot: Option<&DVector<f64>>) -> (Vec<f64>, Vec<f64>) {
    let mut phi = Vec::with_capacity(q.len());
    let mut omega = Vec::with_capacity(q.len());
    let (mut p, mut w) = (0.0, 0.0);
    for i in 0..q.len() {
        p += q[i];
        w += qdot.map_or(0.0, |qd| qd[i]);
        phi.push(p);
        omega.push(w);
    }
    (phi, omega)
}

pub fn ee_pose(arm: &ArmParams, q: &DVector<f64>) -> Vector3<f64> {
    let (phi, _) = absolute(q, None);
    let mut pose = Vector3::zeros();
    for (l, p) in arm.link_lengths.iter().zip(&phi) {
        pose.x += l * p.cos();
        pose.y += l * p.sin();
    }
    pose.z = *phi.last().unwrap_or(&0.0);
    pose
}

/// Pose Jacobian (3 x n) mapping joint rates to `(vx, vy, omega)`.
pub fn jacobian(arm: &ArmParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = q.len();
    let (phi, _) = absolute(q, None);
    let mut jac = DMatrix::zeros(3, n);
    let (mut sx, mut sy) = (0.0, 0.0);
    for k in (0..n).rev() {
        sx += arm.link_lengths[k] * phi[k].sin();
        sy += arm.link_lengths[k] * phi[k].cos();
        jac[(0, k)] = -sx;
        jac[(1, k)] = sy;
        jac[(2, k)] = 1.0;
    }
    jac
}

pub fn ee_twist(arm: &ArmParams, q: &DVector<f64>, qdot: &DVector<f64>) -> Vector3<f64> {
    let v = jacobian(arm, q) * qdot;
    Vector3::new(v[0], v[1], v[2])
}

/// `J̇ q̇`, the velocity-product part of the end-effector acceleration.
pub fn jacobian_dot_qdot(arm: &ArmParams, q: &DVector<f64>, qdot: &DVector<f64>) -> Vector3<f64> {
    let (phi, omega) = absolute(q, Some(qdot));
    let mut acc = Vector3::zeros();
    for k in 0..q.len() {
        let w2 = omega[k] * omega[k];
        acc.x -= arm.link_lengths[k] * phi[k].cos() * w2;
        acc.y -= arm.link_lengths[k] * phi[k].sin() * w2;
    }
    acc
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Damped Newton iteration on the pose error, starting from `seed`.
pub fn inverse_kinematics(arm: &ArmParams, target: &Vector3<f64>, seed: &DVector<f64>) -> Result<DVector<f64>> {
    let mut q = seed.clone();
    let damping = 1e-6;
    for _ in 0..500 {
        let mut err = target - ee_pose(arm, &q);
        err.z = wrap_angle(err.z);
        if err.norm() < 1e-13 {
            return Ok(q);
        }
        let jac = jacobian(arm, &q);
        let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * damping;
        let step = jjt
            .lu()
            .solve(&DVector::from_column_slice(err.as_slice()))
            .ok_or_else(|| Error::InvalidParameter("inverse kinematics hit a singular Jacobian".into()))?;
        q += jac.transpose() * step;
    }
    let mut err = target - ee_pose(arm, &q);
    err.z = wrap_angle(err.z);
    let residual = err.norm();
    if residual < 1e-9 {
        Ok(q)
    } else {
        Err(Error::InvalidParameter(format!(
            "inverse kinematics did not converge (residual {residual:.3e}); target unreachable?"
        )))
    }
}
