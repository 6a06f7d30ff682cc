//! Brute-force dynamics oracles shared by the integration tests.
#![allow(dead_code)]

use compliance_lab::dynamics::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Link center-of-mass positions and the tip, as complex-valued functions of q.
pub fn com_positions(arm: &ArmParams, q: &[Complex64]) -> (Vec<[Complex64; 2]>, [Complex64; 2]) {
    let mut joint = [Complex64::new(0.0, 0.0); 2];
    let mut phi = Complex64::new(0.0, 0.0);
    let mut coms = Vec::new();
    for i in 0..arm.dof() {
        phi += q[i];
        let l = arm.link_lengths[i];
        coms.push([joint[0] + 0.5 * l * phi.cos(), joint[1] + 0.5 * l * phi.sin()]);
        joint = [joint[0] + l * phi.cos(), joint[1] + l * phi.sin()];
    }
    (coms, joint)
}

/// Kinetic energy summed per link, with velocities from complex-step differentiation.
pub fn kinetic_energy(arm: &ArmParams, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
    let h = 1e-30;
    let qc: Vec<Complex64> = q.iter().zip(qdot.iter()).map(|(a, b)| Complex64::new(*a, h * b)).collect();
    let (coms, tip) = com_positions(arm, &qc);
    let mut ke = 0.0;
    let mut omega = 0.0;
    for i in 0..arm.dof() {
        omega += qdot[i];
        let vx = coms[i][0].im / h;
        let vy = coms[i][1].im / h;
        ke += 0.5 * arm.link_masses[i] * (vx * vx + vy * vy) + 0.5 * arm.com_inertia(i) * omega * omega;
    }
    let (tx, ty) = (tip[0].im / h, tip[1].im / h);
    ke + 0.5 * arm.tip_mass * (tx * tx + ty * ty)
}

/// Mass matrix by polarization of the kinetic energy.
pub fn energy_mass_matrix(arm: &ArmParams, q: &DVector<f64>) -> DMatrix<f64> {
    let n = arm.dof();
    let e = |j: usize| {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        v
    };
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 2.0 * kinetic_energy(arm, q, &e(j));
        for k in 0..j {
            let v = kinetic_energy(arm, q, &(e(j) + e(k))) - kinetic_energy(arm, q, &e(j)) - kinetic_energy(arm, q, &e(k));
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    m
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize) -> RobotState {
    loop {
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.5..2.5));
        let qdot = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let state = RobotState::new(q, qdot);
        let jac = jacobian(&ArmParams::default(), &state.q);
        if jac.clone().svd(false, false).singular_values.min() > 0.05 {
            return state;
        }
    }
}

pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}
